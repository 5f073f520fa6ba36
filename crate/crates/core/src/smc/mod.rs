//! Sequential Monte Carlo over genealogies.
//!
//! Particles build genealogies from the leaves up. At each step a particle
//! proposes a duration and a pair, merges them and multiplies its weight by
//! the ratio of target to proposal. Resampling is systematic and is triggered
//! when the effective sample size drops below a fraction of the particle count.

pub mod quadrature;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::{Event, Genealogy};
use crate::greedy::MIN_DELTA;
use crate::kernels::{self, KernelParams, SubtreeMessage};
use crate::util::{choose2, derive_rng, log_sum_exp, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposal {
    PriorPrior,
    PriorPost,
    PostPost,
}

impl std::str::FromStr for Proposal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior-prior" => Ok(Proposal::PriorPrior),
            "prior-post" => Ok(Proposal::PriorPost),
            "post-post" => Ok(Proposal::PostPost),
            _ => Err(Error::Argument(format!("unknown proposal '{s}'"))),
        }
    }
}

impl std::fmt::Display for Proposal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Proposal::PriorPrior => "prior-prior",
            Proposal::PriorPost => "prior-post",
            Proposal::PostPost => "post-post",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SmcConfig {
    pub particles: usize,
    pub proposal: Proposal,
    /// Resample when `ESS / S` falls below this fraction.
    pub resample_threshold: f64,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 100,
            proposal: Proposal::PostPost,
            resample_threshold: 0.5,
            seed: 0,
        }
    }
}

/// A partially built genealogy with its importance weight.
#[derive(Clone, Debug)]
pub struct Particle {
    n: usize,
    events: Vec<Event>,
    messages: Vec<Arc<SubtreeMessage>>,
    /// Live subtree roots in increasing node order.
    active: Vec<usize>,
    time: f64,
    pub log_weight: f64,
}

impl Particle {
    fn new(leaves: &[Arc<SubtreeMessage>], log_weight: f64) -> Self {
        Particle {
            n: leaves.len(),
            events: Vec::with_capacity(leaves.len() - 1),
            messages: leaves.to_vec(),
            active: (0..leaves.len()).collect(),
            time: 0.0,
            log_weight,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_complete(&self) -> bool {
        self.events.len() + 1 == self.n
    }

    pub fn genealogy(&self) -> Result<Genealogy> {
        Genealogy::new(self.n, self.events.clone())
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let a = &self.active;
        (0..a.len())
            .flat_map(|i| (i + 1..a.len()).map(move |j| (a[i], a[j])))
            .collect()
    }

    fn rate(&self) -> f64 {
        choose2(self.active.len())
    }

    fn commit(&mut self, (l, r): (usize, usize), delta: f64, params: &KernelParams) -> Result<()> {
        let t = self.time - delta;
        let m = kernels::merge(&self.messages[l], &self.messages[r], t, params)?;
        self.time = t;
        self.messages.push(Arc::new(m.message));
        self.active.retain(|&x| x != l && x != r);
        self.active.push(self.n + self.events.len());
        self.events.push(Event { left: l, right: r, delta });
        Ok(())
    }
}

/// One proposed extension of a particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub delta: f64,
    pub pair: (usize, usize),
    pub log_increment: f64,
}

fn prior_delta<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let d: f64 = Exp::new(rate).expect("positive rate").sample(rng);
    // a draw of exactly zero would merge contradictory leaves with Z = 0
    d.max(MIN_DELTA)
}

fn pick_weighted<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<(usize, f64)> {
    let total = log_sum_exp(log_w);
    if !total.is_finite() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, &w) in log_w.iter().enumerate() {
        if w == f64::NEG_INFINITY {
            continue;
        }
        acc += (w - total).exp();
        last = Some(k);
        if u < acc {
            return Some((k, total));
        }
    }
    last.map(|k| (k, total))
}

fn log_z_or_zero(
    p: &Particle,
    (l, r): (usize, usize),
    t: f64,
    params: &KernelParams,
) -> Result<f64> {
    match kernels::merge_log_z(&p.messages[l], &p.messages[r], t, params) {
        Err(Error::DegenerateLikelihood { .. }) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Duration from the prior, pair uniform; increment `log Z`.
pub fn propose_prior_prior<R: Rng + ?Sized>(p: &Particle, params: &KernelParams, rng: &mut R) -> Result<Step> {
    let delta = prior_delta(p.rate(), rng);
    let pairs = p.pairs();
    let pair = pairs[rng.random_range(0..pairs.len())];
    let log_increment = log_z_or_zero(p, pair, p.time - delta, params)?;
    Ok(Step {
        delta,
        pair,
        log_increment,
    })
}

/// Duration from the prior, pair proportional to `Z`; increment is the log of
/// the mean of `Z` over pairs.
pub fn propose_prior_post<R: Rng + ?Sized>(
    p: &Particle,
    params: &KernelParams,
    rng: &mut R,
    iteration: usize,
) -> Result<Step> {
    let delta = prior_delta(p.rate(), rng);
    let pairs = p.pairs();
    let t = p.time - delta;
    let log_z = pairs
        .iter()
        .map(|&pair| log_z_or_zero(p, pair, t, params))
        .collect::<Result<Vec<_>>>()?;
    let (k, total) = pick_weighted(&log_z, rng).ok_or(Error::Degeneracy { iteration })?;
    Ok(Step {
        delta,
        pair: pairs[k],
        log_increment: total - (pairs.len() as f64).ln(),
    })
}

/// Pair proportional to `I = int exp(-C delta) Z(delta) d delta`, duration from
/// its normalized integrand; increment `log sum I`.
pub fn propose_post_post<R: Rng + ?Sized>(p: &Particle, params: &KernelParams, rng: &mut R) -> Result<Step> {
    let pairs = p.pairs();
    let rate = p.rate();
    let log_i = pairs
        .par_iter()
        .map(|&(l, r)| {
            quadrature::log_pair_integral(&p.messages[l], &p.messages[r], p.time, rate, params)
                .map_err(|e| Error::Numeric(format!("pair ({l}, {r}): {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (k, total) = pick_weighted(&log_i, rng).ok_or_else(|| Error::Numeric("all pair integrals vanish".into()))?;
    let (l, r) = pairs[k];
    let post = quadrature::delta_posterior(&p.messages[l], &p.messages[r], p.time, rate, params)?;
    let delta = post.sample(rng)?.max(MIN_DELTA);
    Ok(Step {
        delta,
        pair: (l, r),
        log_increment: total,
    })
}

/// `1 / sum w^2` for normalized weights given in log space.
pub fn ess(log_weights: &[f64]) -> f64 {
    let total = log_sum_exp(log_weights);
    if !total.is_finite() {
        return 0.0;
    }
    1.0 / log_weights
        .iter()
        .map(|w| (2.0 * (w - total)).exp())
        .sum::<f64>()
}

/// Ancestor indices by systematic resampling: one uniform offset and `S`
/// evenly spaced positions on the cumulative normalized weights.
pub fn systematic_resample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Vec<usize> {
    let s = log_weights.len();
    let total = log_sum_exp(log_weights);
    let offset: f64 = rng.random();
    let mut out = Vec::with_capacity(s);
    let mut cum = 0.0;
    let mut j = 0;
    for (i, w) in log_weights.iter().enumerate() {
        cum += (w - total).exp() * s as f64;
        while j < s && (j as f64 + offset) < cum {
            out.push(i);
            j += 1;
        }
    }
    // rounding can leave the last positions unassigned
    let last = log_weights
        .iter()
        .rposition(|w| *w > f64::NEG_INFINITY)
        .unwrap_or(s - 1);
    out.resize(s, last);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationDiagnostics {
    /// 1-based merge index.
    pub iteration: usize,
    /// Effective sample size after the weight update, before any resampling.
    pub ess: f64,
    /// Running estimate of `log p(x)`.
    pub log_norm: f64,
    pub resampled: bool,
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    /// Sum over resampling events of the log mean weight.
    pub log_norm: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl ParticleEnsemble {
    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let lw = self.log_weights();
        let total = log_sum_exp(&lw);
        lw.iter().map(|w| (w - total).exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.log_weights())
    }

    /// Estimate of `log p(x)`.
    pub fn log_marginal_estimate(&self) -> f64 {
        let lw = self.log_weights();
        self.log_norm + log_sum_exp(&lw) - (lw.len() as f64).ln()
    }

    /// Highest-weight particle; ties go to the lowest index.
    pub fn best(&self) -> &Particle {
        let mut best = &self.particles[0];
        for p in &self.particles[1..] {
            if p.log_weight > best.log_weight {
                best = p;
            }
        }
        best
    }

    /// Complete genealogies with normalized weights.
    pub fn weighted_genealogies(&self) -> Result<Vec<(Genealogy, f64)>> {
        self.particles
            .iter()
            .zip(self.normalized_weights())
            .map(|(p, w)| Ok((p.genealogy()?, w)))
            .collect()
    }
}

pub fn run_smc(data: &DataMatrix, params: &KernelParams, config: &SmcConfig) -> Result<ParticleEnsemble> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 rows, got {n}")));
    }
    if config.particles == 0 {
        return Err(Error::Argument("particle count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.resample_threshold) {
        return Err(Error::Argument(format!(
            "resample threshold {} outside [0, 1]",
            config.resample_threshold
        )));
    }
    params.check_data(data)?;
    let leaves = (0..n)
        .map(|r| kernels::leaf_message(&data.row(r), params).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let leaf_term = kernels::data_leaf_log_term(data, params);
    let s = config.particles;
    let mut particles = vec![Particle::new(&leaves, leaf_term); s];
    let mut log_norm = 0.0;
    let mut diagnostics = Vec::with_capacity(n - 1);
    for it in 0..n - 1 {
        let iteration = it + 1;
        particles
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(slot, p)| -> Result<()> {
                let mut rng: SeededRng = derive_rng(config.seed, &[iteration as u64, slot as u64]);
                let step = match config.proposal {
                    Proposal::PriorPrior => propose_prior_prior(p, params, &mut rng)?,
                    Proposal::PriorPost => propose_prior_post(p, params, &mut rng, iteration)?,
                    Proposal::PostPost => propose_post_post(p, params, &mut rng)?,
                };
                p.log_weight += step.log_increment;
                if p.log_weight == f64::NEG_INFINITY {
                    // keep the structure valid; the particle is dropped at resampling
                    p.events.push(Event {
                        left: step.pair.0,
                        right: step.pair.1,
                        delta: step.delta,
                    });
                    let node = p.n + p.events.len() - 1;
                    p.time -= step.delta;
                    p.messages.push(p.messages[step.pair.0].clone());
                    p.active.retain(|&x| x != step.pair.0 && x != step.pair.1);
                    p.active.push(node);
                    return Ok(());
                }
                p.commit(step.pair, step.delta, params)
            })?;
        let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        if lw.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::Degeneracy { iteration });
        }
        if lw.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numeric(format!("non-finite particle weight at iteration {iteration}")));
        }
        let e = ess(&lw);
        let resampled = it + 1 < n - 1 && e / (s as f64) < config.resample_threshold;
        if resampled {
            let mut rng = derive_rng(config.seed, &[iteration as u64, u64::MAX]);
            let ancestors = systematic_resample(&lw, &mut rng);
            log_norm += log_sum_exp(&lw) - (s as f64).ln();
            particles = ancestors
                .into_iter()
                .map(|a| {
                    let mut c = particles[a].clone();
                    c.log_weight = 0.0;
                    c
                })
                .collect();
        }
        let current: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        diagnostics.push(IterationDiagnostics {
            iteration,
            ess: e,
            log_norm: log_norm + log_sum_exp(&current) - (s as f64).ln(),
            resampled,
        });
    }
    Ok(ParticleEnsemble {
        particles,
        log_norm,
        diagnostics,
    })
}
