//! Integrals `I = int_0^inf exp(-C delta) Z(delta) d delta` and draws from the
//! normalized integrand, used by the post-post proposal.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::kernels::duration::{self, DurationObjective};
use crate::kernels::{self, BrownianDuration, KernelParams, MultinomialDuration, SubtreeMessage};

/// Density below the peak (in nats) at which the upper limit is placed.
const TAIL_DROP: f64 = 46.0;
const REL_TOL: f64 = 1e-11;
const MAX_DEPTH: u32 = 40;
const DYADIC_BREAKS: i32 = 50;

/// `log K_nu(x)` for `x > 0`, by the trapezoid rule on
/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`.
pub fn log_bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel argument must be positive");
    let nu = nu.abs();
    let log_cosh = |y: f64| y.abs() + (-2.0 * y.abs()).exp().ln_1p() - std::f64::consts::LN_2;
    let f = |t: f64| -x * (t.cosh() - 1.0) + log_cosh(nu * t);
    let h = (0.2 / x.sqrt()).min(0.02);
    // locate the peak, then integrate until 60 nats below it
    let mut peak_t = 0.0;
    let mut peak = f(0.0);
    let mut t = h;
    loop {
        let v = f(t);
        if v > peak {
            peak = v;
            peak_t = t;
        } else if v < peak - 60.0 && t > peak_t {
            break;
        }
        t += h;
    }
    let steps = (t / h).ceil() as usize;
    let sum: f64 = (0..=steps)
        .map(|k| {
            let w = if k == 0 { 0.5 } else { 1.0 };
            w * (f(k as f64 * h) - peak).exp()
        })
        .sum();
    -x + peak + (h * sum).ln()
}

/// Piecewise-uniform representation of the duration posterior in `u = sqrt(delta)`.
#[derive(Clone, Debug)]
pub struct Panels {
    /// `(u_start, u_end, mass)` with masses relative to `exp(reference)`.
    pieces: Vec<(f64, f64, f64)>,
    total: f64,
    reference: f64,
}

impl Panels {
    pub fn log_integral(&self) -> f64 {
        self.reference + self.total.ln()
    }

    /// Inverse-CDF draw with linear interpolation inside each panel.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.total;
        let mut acc = 0.0;
        for &(a, b, m) in &self.pieces {
            if acc + m >= target && m > 0.0 {
                let u = a + (b - a) * ((target - acc) / m).clamp(0.0, 1.0);
                return u * u;
            }
            acc += m;
        }
        let &(_, b, _) = self.pieces.last().expect("non-empty");
        b * b
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
    out: &mut Vec<(f64, f64, f64)>,
) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * eps {
        let corr = diff / 15.0;
        let share = if left + right > 0.0 { (left + right + corr).max(0.0) / (left + right) } else { 1.0 };
        out.push((a, m, left * share));
        out.push((m, b, right * share));
        return;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1, out);
    adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1, out);
}

/// Adaptive Simpson quadrature of `exp(value(delta))` over `[0, inf)` after
/// the substitution `delta = u^2`.
pub fn quadrature<O: DurationObjective + ?Sized>(obj: &O) -> Result<Panels> {
    let maxima = duration::local_maxima(obj)?;
    let reference = maxima
        .iter()
        .map(|&d| obj.value(d))
        .fold(f64::NEG_INFINITY, f64::max);
    if !reference.is_finite() {
        return Err(Error::Numeric(format!("integrand peak is not finite ({reference})")));
    }
    let mut hi = obj
        .decreasing_beyond()
        .max(maxima.iter().copied().fold(0.0, f64::max))
        .max(1e-12);
    let mut guard = 0;
    while !(obj.value(hi) < reference - TAIL_DROP) {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Numeric("integrand tail does not decay".into()));
        }
    }
    let h = |u: f64| {
        if u == 0.0 {
            return 0.0;
        }
        let v = obj.value(u * u) - reference;
        if v.is_nan() { 0.0 } else { 2.0 * u * v.exp() }
    };
    let mut breaks: Vec<f64> = std::iter::once(0.0)
        .chain((0..=DYADIC_BREAKS).map(|k| (hi * 0.5f64.powi(k)).sqrt()))
        .chain(maxima.iter().map(|d| d.sqrt()))
        .filter(|u| u.is_finite())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let segs: Vec<(f64, f64, f64, f64, f64, f64)> = breaks
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fm, fb) = (h(a), h(0.5 * (a + b)), h(b));
            (a, b, fa, fm, fb, simpson(fa, fm, fb, a, b))
        })
        .collect();
    let rough: f64 = segs.iter().map(|s| s.5).sum();
    let scale = rough.max(maxima.iter().map(|d| h(d.sqrt())).fold(0.0, f64::max) * 1e-6).max(1e-300);
    let eps = REL_TOL * scale / segs.len() as f64;
    let mut pieces = Vec::new();
    for (a, b, fa, fm, fb, whole) in segs {
        adaptive(&h, a, b, fa, fm, fb, whole, eps, MAX_DEPTH, &mut pieces);
    }
    let total: f64 = pieces.iter().map(|p| p.2).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("quadrature total {total} is not positive and finite")));
    }
    Ok(Panels {
        pieces,
        total,
        reference,
    })
}

const GL_NODES: [(f64, f64); 5] = [
    (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_4),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982_0),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
];
const GL_REL_TOL: f64 = 1e-11;
const GL_MAX_DEPTH: u32 = 30;
/// Geometric panels below the upper cut when the integrand reaches `u = 0`;
/// the remaining `[0, start]` piece is left to bisection.
const GL_GEOMETRIC_PANELS: i32 = 8;

fn gauss10<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * GL_NODES.iter().map(|&(x, w)| w * (f(c - r * x) + f(c + r * x))).sum::<f64>()
}

fn gauss_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (left, right) = (gauss10(f, a, m), gauss10(f, m, b));
    if depth == 0 || (left + right - whole).abs() <= eps {
        return left + right;
    }
    gauss_adaptive(f, a, m, left, eps / 2.0, depth - 1) + gauss_adaptive(f, m, b, right, eps / 2.0, depth - 1)
}

/// `log int_0^inf exp(value(delta)) d delta` by adaptive Gauss-Legendre on
/// geometric panels in `u = sqrt(delta)` covering the region within
/// `TAIL_DROP` nats of the peak.
pub fn log_integral<O: DurationObjective + ?Sized>(obj: &O) -> Result<f64> {
    let maxima = duration::local_maxima(obj)?;
    let reference = maxima
        .iter()
        .map(|&d| obj.value(d))
        .fold(f64::NEG_INFINITY, f64::max);
    if !reference.is_finite() {
        return Err(Error::Numeric(format!("integrand peak is not finite ({reference})")));
    }
    let mut hi = obj
        .decreasing_beyond()
        .max(maxima.iter().copied().fold(0.0, f64::max))
        .max(1e-12);
    let mut guard = 0;
    while !(obj.value(hi) < reference - TAIL_DROP) {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Numeric("integrand tail does not decay".into()));
        }
    }
    let first = maxima.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = first;
    if lo > 0.0 {
        let floor = hi * 0.5f64.powi(2 * DYADIC_BREAKS);
        while lo > floor && !(obj.value(lo) < reference - TAIL_DROP) {
            lo *= 0.5;
        }
        if lo <= floor {
            lo = 0.0;
        }
    }
    let h = |u: f64| {
        if u == 0.0 {
            return 0.0;
        }
        let v = obj.value(u * u) - reference;
        if v.is_nan() { 0.0 } else { 2.0 * u * v.exp() }
    };
    // panels double in u; the first starts at 0 or at the lower cut
    let (u_lo, u_hi) = (lo.sqrt(), hi.sqrt());
    let mut breaks = vec![u_hi];
    let start = if u_lo > 0.0 { u_lo } else { u_hi * 0.5f64.powi(GL_GEOMETRIC_PANELS) };
    while *breaks.last().unwrap() * 0.5 > start {
        let next = *breaks.last().unwrap() * 0.5;
        breaks.push(next);
    }
    breaks.push(u_lo);
    breaks.extend(maxima.iter().map(|d| d.sqrt()));
    breaks.retain(|u| u.is_finite() && *u >= u_lo && *u <= u_hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let panels: Vec<(f64, f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1], gauss10(&h, w[0], w[1]))).collect();
    let rough: f64 = panels.iter().map(|p| p.2).sum();
    let scale = rough.max(maxima.iter().map(|d| h(d.sqrt())).fold(0.0, f64::max) * 1e-6).max(1e-300);
    let eps = GL_REL_TOL * scale / panels.len().max(1) as f64;
    let total: f64 = panels
        .into_iter()
        .map(|(a, b, whole)| gauss_adaptive(&h, a, b, whole, eps, GL_MAX_DEPTH))
        .sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("quadrature total {total} is not positive and finite")));
    }
    Ok(reference + total.ln())
}

/// Closed form of the Brownian integral when both children sit at the
/// previous event time with zero variance (two leaves at the first merge).
fn brownian_at_leaves(obj: &BrownianDuration) -> Option<Result<f64>> {
    if obj.shared_dims() == 0 || obj.common_offset() != Some(0.0) {
        return None;
    }
    let d = obj.shared_dims() as f64;
    let dist = obj.scaled_distance();
    let c = obj.rate();
    if dist > 0.0 {
        let (a, b) = (c / 2.0, dist / 2.0);
        let nu = 1.0 - d / 2.0;
        let log_i = 0.5f64.ln() + obj.log_scale() + 2f64.ln() + 0.5 * nu * (b / a).ln() + log_bessel_k(nu, 2.0 * (a * b).sqrt());
        Some(Ok(log_i))
    } else if obj.shared_dims() == 1 {
        // int exp(-C delta) (4 pi lambda delta)^{-1/2} d delta
        Some(Ok(obj.log_scale() - 0.5 * 2f64.ln() + 0.5 * (std::f64::consts::PI / c).ln()))
    } else {
        Some(Err(Error::Numeric(format!(
            "integral diverges for identical points in {} dimensions",
            obj.shared_dims()
        ))))
    }
}

/// Posterior over the merge duration of one candidate pair.
pub enum DeltaPosterior {
    Panels(Panels),
    /// Exact law `Gamma(1/2, rate)` for identical one-dimensional leaves.
    HalfGamma { log_integral: f64, rate: f64 },
    /// Closed-form integral; panels are built only when a draw is needed.
    Deferred { log_integral: f64, objective: BrownianDuration },
}

impl DeltaPosterior {
    pub fn log_integral(&self) -> f64 {
        match self {
            DeltaPosterior::Panels(p) => p.log_integral(),
            DeltaPosterior::HalfGamma { log_integral, .. } | DeltaPosterior::Deferred { log_integral, .. } => {
                *log_integral
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            DeltaPosterior::Panels(p) => Ok(p.sample(rng)),
            DeltaPosterior::HalfGamma { rate, .. } => {
                let g = Gamma::new(0.5, 1.0 / rate).map_err(|e| Error::Numeric(e.to_string()))?;
                Ok(g.sample(rng))
            }
            DeltaPosterior::Deferred { objective, .. } => Ok(quadrature(objective)?.sample(rng)),
        }
    }
}

/// Integral and sampler for the pair `(left, right)` merging after `prev_time`
/// with coalescence rate `rate`.
pub fn delta_posterior(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<DeltaPosterior> {
    match params {
        KernelParams::Brownian { .. } => {
            let obj = BrownianDuration::new(left, right, prev_time, rate, params)?;
            match brownian_at_leaves(&obj) {
                Some(Ok(log_integral)) if obj.scaled_distance() == 0.0 => {
                    Ok(DeltaPosterior::HalfGamma { log_integral, rate })
                }
                Some(Ok(log_integral)) => Ok(DeltaPosterior::Deferred {
                    log_integral,
                    objective: obj,
                }),
                Some(Err(e)) => Err(e),
                None => Ok(DeltaPosterior::Panels(quadrature(&obj)?)),
            }
        }
        KernelParams::Multinomial { .. } => {
            let obj = MultinomialDuration::new(left, right, prev_time, rate, params)?;
            Ok(DeltaPosterior::Panels(quadrature(&obj)?))
        }
    }
}

/// `log I` for a pair without keeping the sampler.
pub fn log_pair_integral(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<f64> {
    let v = match params {
        KernelParams::Brownian { .. } => {
            let obj = BrownianDuration::new(left, right, prev_time, rate, params)?;
            match brownian_at_leaves(&obj) {
                Some(r) => r?,
                None => log_integral(&obj)?,
            }
        }
        KernelParams::Multinomial { .. } => log_integral(&MultinomialDuration::new(left, right, prev_time, rate, params)?)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("pair integral is {v}")))
    }
}

/// Numerical integral of any duration objective, ignoring closed forms.
pub fn log_integral_numeric(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<f64> {
    let obj = kernels::duration_objective(left, right, prev_time, rate, params)?;
    Ok(quadrature(obj.as_ref())?.log_integral())
}
