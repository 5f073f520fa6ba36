//! Forward simulation from the model and the held-out prediction sweep.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{ColumnKind, DataMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{heldout_log_predictive, Method};
use crate::genealogy::{self, Genealogy};
use crate::kernels::{CategoricalDim, KernelParams, ModelKind};
use crate::util::derive_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub dims: usize,
    pub model: ModelKind,
    /// Diffusion variance rate (Brownian) or mutation rate (multinomial), shared by all dimensions.
    pub lambda: f64,
    /// Categories per dimension (multinomial only).
    pub k: usize,
    /// Equilibrium distribution; uniform when absent.
    pub q: Option<Vec<f64>>,
    pub seed: u64,
    pub mask_fraction: f64,
}

impl SynthConfig {
    pub fn brownian(n: usize, dims: usize, lambda: f64, seed: u64) -> Self {
        SynthConfig {
            n,
            dims,
            model: ModelKind::Brownian,
            lambda,
            k: 0,
            q: None,
            seed,
            mask_fraction: 0.0,
        }
    }

    pub fn multinomial(n: usize, dims: usize, k: usize, lambda: f64, seed: u64) -> Self {
        SynthConfig {
            n,
            dims,
            model: ModelKind::Multinomial,
            lambda,
            k,
            q: None,
            seed,
            mask_fraction: 0.0,
        }
    }

    pub fn with_mask(mut self, fraction: f64) -> Self {
        self.mask_fraction = fraction;
        self
    }

    pub fn equilibrium(&self) -> Vec<f64> {
        self.q.clone().unwrap_or_else(|| vec![1.0 / self.k as f64; self.k])
    }

    /// Kernel parameters the data were generated from.
    pub fn true_params(&self) -> Result<KernelParams> {
        match self.model {
            ModelKind::Brownian => KernelParams::isotropic_brownian(self.dims, self.lambda),
            ModelKind::Multinomial => {
                let q = self.equilibrium();
                KernelParams::multinomial(vec![CategoricalDim { rate: self.lambda, equilibrium: q }; self.dims])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.dims == 0 {
            return Err(Error::Config(format!("need n >= 2 and D >= 1, got n={} D={}", self.n, self.dims)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("rate must be positive, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config(format!("mask fraction {} outside [0, 1)", self.mask_fraction)));
        }
        if self.model == ModelKind::Multinomial {
            if self.k < 2 {
                return Err(Error::Config(format!("need K >= 2 categories, got {}", self.k)));
            }
            let q = self.equilibrium();
            if q.len() != self.k || q.iter().any(|&x| !(x > 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config("equilibrium must be a positive distribution over K levels".into()));
            }
        }
        Ok(())
    }
}

/// Samples a genealogy from the coalescent, runs the Markov process down its
/// branches and returns the (optionally masked) leaf values with the tree.
pub fn generate(cfg: &SynthConfig) -> Result<(DataMatrix, Genealogy)> {
    cfg.validate()?;
    let g = genealogy::sample(cfg.n, &mut derive_rng(cfg.seed, &[0]))?;
    let mut rng = derive_rng(cfg.seed, &[1]);
    let times = g.node_times();
    let root = g.root();
    let nodes = g.node_count();
    let mut latent = vec![vec![0.0; cfg.dims]; nodes];
    let q = cfg.equilibrium();
    let draw_q = WeightedIndex::new(if cfg.model == ModelKind::Multinomial { &q[..] } else { &[1.0][..] })
        .map_err(|e| Error::Config(e.to_string()))?;
    if cfg.model == ModelKind::Multinomial {
        for x in latent[root].iter_mut() {
            *x = draw_q.sample(&mut rng) as f64;
        }
    }
    // events are in time order, so walking them backwards visits parents first
    for node in (cfg.n..nodes).rev() {
        let (l, r) = g.children(node).expect("internal");
        for child in [l, r] {
            let tau = times[child] - times[node];
            for d in 0..cfg.dims {
                let parent = latent[node][d];
                latent[child][d] = match cfg.model {
                    ModelKind::Brownian => {
                        let sd = (cfg.lambda * tau).sqrt();
                        parent + Normal::new(0.0, sd).expect("finite sd").sample(&mut rng)
                    }
                    ModelKind::Multinomial => {
                        if rng.random::<f64>() < (-cfg.lambda * tau).exp() {
                            parent
                        } else {
                            draw_q.sample(&mut rng) as f64
                        }
                    }
                };
            }
        }
    }
    let kind = match cfg.model {
        ModelKind::Brownian => ColumnKind::Real,
        ModelKind::Multinomial => ColumnKind::Categorical(cfg.k),
    };
    let mut mask_rng = derive_rng(cfg.seed, &[2]);
    let cells = latent[..cfg.n]
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| (mask_rng.random::<f64>() >= cfg.mask_fraction).then_some(v))
                .collect()
        })
        .collect();
    let names = (0..cfg.dims).map(|d| format!("x{d}")).collect();
    let data = DataMatrix::new(names, vec![kind; cfg.dims], cells)?
        .with_row_labels((0..cfg.n).map(|i| format!("r{i}")).collect())?;
    Ok((data, g))
}

/// Labels leaves by the `k` subtrees left after undoing the top `k - 1`
/// merges of `g`. Classes are numbered by their smallest leaf.
pub fn cut_classes(g: &Genealogy, k: usize) -> Result<Vec<usize>> {
    let n = g.n_leaves();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot cut {n} leaves into {k} classes")));
    }
    let mut tops = vec![g.root()];
    for node in (n..g.node_count()).rev().take(k - 1) {
        let (l, r) = g.children(node).expect("internal");
        tops.retain(|&x| x != node);
        tops.extend([l, r]);
    }
    let sets = g.leaf_sets();
    let mut groups: Vec<Vec<usize>> = tops.iter().map(|&t| sets[t].clone()).collect();
    groups.sort_by_key(|m| m.iter().copied().min());
    let mut labels = vec![0; n];
    for (c, members) in groups.iter().enumerate() {
        for &m in members {
            labels[m] = c;
        }
    }
    Ok(labels)
}

/// Which generation setting a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Dims,
    Leaves,
    Rate,
    Particles,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" | "dims" => Ok(SweepAxis::Dims),
            "n" | "leaves" => Ok(SweepAxis::Leaves),
            "lambda" | "rate" => Ok(SweepAxis::Rate),
            "S" | "particles" => Ok(SweepAxis::Particles),
            _ => Err(Error::Argument(format!("unknown sweep axis '{s}'"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Dims => "D",
            SweepAxis::Leaves => "n",
            SweepAxis::Rate => "lambda",
            SweepAxis::Particles => "S",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub n: usize,
    pub dims: usize,
    pub lambda: f64,
    pub particles: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Brownian sweep with middle values n=16, D=8, λ=1, S=50 and 100 repeats.
    pub fn new(axis: SweepAxis, values: Vec<f64>, methods: Vec<Method>) -> Self {
        SweepConfig {
            axis,
            values,
            methods,
            repeats: 100,
            n: 16,
            dims: 8,
            lambda: 1.0,
            particles: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub method: String,
    pub mean: f64,
    pub stderr: f64,
    pub completed: usize,
    pub failed: usize,
    /// Per-repeat scores, `None` where the method failed.
    pub scores: Vec<Option<f64>>,
}

fn with_particles(m: Method, s: usize) -> Method {
    match m {
        Method::Smc { proposal, .. } => Method::Smc { proposal, particles: s },
        other => other,
    }
}

/// For each axis value and repeat: generate Brownian data, hide one uniformly
/// chosen entry, and score each method's log predictive of the hidden value.
/// Repeat `r` uses the same data for every method and axis value sharing its
/// generation settings.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.repeats == 0 || cfg.methods.is_empty() || cfg.values.is_empty() {
        return Err(Error::Config("sweep needs values, methods and at least one repeat".into()));
    }
    let mut rows = Vec::new();
    for (vi, &value) in cfg.values.iter().enumerate() {
        let (mut n, mut dims, mut lambda, mut s) = (cfg.n, cfg.dims, cfg.lambda, cfg.particles);
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {value}", cfg.axis)))
            }
        };
        match cfg.axis {
            SweepAxis::Dims => dims = as_count()?,
            SweepAxis::Leaves => n = as_count()?,
            SweepAxis::Rate => lambda = value,
            SweepAxis::Particles => s = as_count()?,
        }
        // data depend only on the generation settings, so the S axis reuses them
        let data_key = if cfg.axis == SweepAxis::Particles { 0 } else { vi as u64 };
        let per_repeat: Vec<Result<Vec<Result<f64>>>> = (0..cfg.repeats)
            .into_par_iter()
            .map(|rep| {
                let base = derive_rng(cfg.seed, &[data_key, rep as u64]).random::<u64>();
                let synth = SynthConfig::brownian(n, dims, lambda, base);
                let (truth, _) = generate(&synth)?;
                let params = synth.true_params()?;
                let mut pick = derive_rng(base, &[3]);
                let (row, col) = (pick.random_range(0..n), pick.random_range(0..dims));
                let mut masked = truth.clone();
                masked.set(row, col, None)?;
                let value = truth.get(row, col).expect("generated data are complete");
                Ok(cfg
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &m)| {
                        heldout_log_predictive(&masked, (row, col), value, &params, with_particles(m, s), base ^ mi as u64)
                    })
                    .collect())
            })
            .collect();
        let per_repeat = per_repeat.into_iter().collect::<Result<Vec<_>>>()?;
        for (mi, &m) in cfg.methods.iter().enumerate() {
            let scores: Vec<Option<f64>> = per_repeat
                .iter()
                .map(|r| match &r[mi] {
                    Ok(v) => Some(*v),
                    Err(e) => {
                        log::warn!("{m} failed on a repeat: {e}");
                        None
                    }
                })
                .collect();
            let ok: Vec<f64> = scores.iter().flatten().copied().collect();
            let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
            let stderr = if ok.len() < 2 {
                f64::NAN
            } else {
                let var = ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
                (var / ok.len() as f64).sqrt()
            };
            rows.push(SweepRow {
                value,
                method: with_particles(m, s).to_string(),
                mean,
                stderr,
                completed: ok.len(),
                failed: scores.len() - ok.len(),
                scores,
            });
        }
    }
    Ok(rows)
}
