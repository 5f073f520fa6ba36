//! Hyperparameter updates at a fixed genealogy.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::Genealogy;
use crate::kernels::{self, CategoricalDim, KernelParams, MessageBody};

use super::jet::Jet;

const LOG_RATE_RANGE: (f64, f64) = (-9.210_340_371_976_184, 9.210_340_371_976_184);
const ETA_LIMIT: f64 = 20.0;
const GRAD_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 50;
const MAX_HALVINGS: usize = 40;

/// Per-dimension sufficient statistics of the Brownian contrasts: the number
/// of merges observing the dimension on both sides and `sum diff^2 / s`.
fn brownian_contrasts(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (msgs, _) = kernels::upward_pass(g, data, params)?;
    let dims = params.dims();
    let mut count = vec![0.0; dims];
    let mut sum = vec![0.0; dims];
    for (e, t) in g.events().iter().zip(g.merge_times()) {
        let (
            MessageBody::Gaussian { mean: ml, var_scale: vl },
            MessageBody::Gaussian { mean: mr, var_scale: vr },
        ) = (&msgs[e.left].body, &msgs[e.right].body)
        else {
            return Err(Error::Unsupported("brownian update needs gaussian messages".into()));
        };
        for d in 0..dims {
            if vl[d].is_finite() && vr[d].is_finite() {
                let s = vl[d] + vr[d] + msgs[e.left].time + msgs[e.right].time - 2.0 * t;
                let diff = ml[d] - mr[d];
                count[d] += 1.0;
                sum[d] += diff * diff / s;
            }
        }
    }
    Ok((count, sum))
}

/// MAP diffusion variances under a Gamma(a, b) prior (shape, scale) on each
/// inverse variance. Messages do not depend on the variances, so this is the
/// exact maximizer at the given tree.
pub fn estimate_brownian_lambda(g: &Genealogy, data: &DataMatrix, gamma_a: f64, gamma_b: f64) -> Result<Vec<f64>> {
    if !(gamma_a > 0.0 && gamma_b > 0.0) {
        return Err(Error::Config(format!("gamma prior ({gamma_a}, {gamma_b}) must be positive")));
    }
    let params = KernelParams::isotropic_brownian(data.n_cols(), 1.0)?;
    let (count, sum) = brownian_contrasts(g, data, &params)?;
    count
        .iter()
        .zip(&sum)
        .map(|(&m, &s)| {
            let a_hat = gamma_a + m / 2.0;
            if a_hat <= 1.0 {
                return Err(Error::Config(format!(
                    "posterior shape {a_hat} <= 1 has no interior mode; raise gamma_a"
                )));
            }
            let b_hat = 1.0 / (1.0 / gamma_b + s / 2.0);
            Ok(1.0 / ((a_hat - 1.0) * b_hat))
        })
        .collect()
}

/// `sum_d (a - 1) log(1/lambda_d) - 1/(b lambda_d)`, the Gamma log-density of the
/// inverse variances up to a constant.
pub fn brownian_log_hyperprior(lambda: &[f64], gamma_a: f64, gamma_b: f64) -> f64 {
    lambda
        .iter()
        .map(|&l| -(gamma_a - 1.0) * l.ln() - 1.0 / (gamma_b * l))
        .sum()
}

/// Log-marginal contribution of one categorical dimension as a function of
/// `log lambda` and the free softmax logits (the last logit is fixed to 0).
struct DimProblem<'a> {
    node_times: Vec<f64>,
    events: &'a [crate::genealogy::Event],
    /// Observed category per leaf.
    leaves: Vec<Option<usize>>,
    k: usize,
}

impl DimProblem<'_> {
    fn eval(&self, log_rate: Jet, eta: &[Jet]) -> Jet {
        let max = eta.iter().map(|e| e.v).fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<Jet> = eta.iter().map(|&e| (e - Jet::constant(max)).exp()).collect();
        let total = ex.iter().fold(Jet::ZERO, |a, &b| a + b);
        let q: Vec<Jet> = ex.iter().map(|&e| e / total).collect();
        let rate = log_rate.exp();
        let n = self.leaves.len();
        let mut obj = Jet::ZERO;
        let mut msgs: Vec<(Vec<Jet>, bool)> = Vec::with_capacity(2 * n - 1);
        for leaf in &self.leaves {
            match *leaf {
                Some(x) => {
                    let mut m = vec![Jet::ZERO; self.k];
                    m[x] = q[x].recip();
                    obj = obj + q[x].ln();
                    msgs.push((m, true));
                }
                None => msgs.push((vec![Jet::ONE; self.k], false)),
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let t = self.node_times[n + i];
            let (tl, tr) = (self.node_times[e.left], self.node_times[e.right]);
            let (ml, ol) = &msgs[e.left];
            let (mr, or) = &msgs[e.right];
            if !ol && !or {
                msgs.push((vec![Jet::ONE; self.k], false));
                continue;
            }
            let overlap = (0..self.k).fold(Jet::ZERO, |acc, c| acc + q[c] * ml[c] * mr[c]);
            let z = Jet::ONE - (rate.scale(2.0 * t - tl - tr)).exp() * (Jet::ONE - overlap);
            if !(z.v > 0.0) {
                return Jet::constant(f64::NEG_INFINITY);
            }
            obj = obj + z.ln();
            let el = rate.scale(t - tl).exp();
            let er = rate.scale(t - tr).exp();
            let m = (0..self.k)
                .map(|c| {
                    let nl = Jet::ONE - el * (Jet::ONE - ml[c]);
                    let nr = Jet::ONE - er * (Jet::ONE - mr[c]);
                    nl * nr / z
                })
                .collect();
            msgs.push((m, true));
        }
        obj
    }

    /// Value and first/second derivative along coordinate `coord`
    /// (0 = log rate, `1 + k` = logit k).
    fn directional(&self, x: &[f64], coord: Option<usize>) -> Jet {
        let lift = |i: usize| {
            if Some(i) == coord {
                Jet::variable(x[i])
            } else {
                Jet::constant(x[i])
            }
        };
        let mut eta: Vec<Jet> = (1..self.k).map(lift).collect();
        eta.push(Jet::ZERO);
        self.eval(lift(0), &eta)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.directional(x, None).v
    }
}

fn dim_problem<'a>(g: &'a Genealogy, data: &DataMatrix, dim: usize, k: usize) -> DimProblem<'a> {
    DimProblem {
        node_times: g.node_times(),
        events: g.events(),
        leaves: (0..data.n_rows()).map(|r| data.category(r, dim)).collect(),
        k,
    }
}

fn encode(dim: &CategoricalDim) -> Vec<f64> {
    let k = dim.equilibrium.len();
    let last = dim.equilibrium[k - 1].ln();
    std::iter::once(dim.rate.ln())
        .chain(dim.equilibrium[..k - 1].iter().map(|q| (q.ln() - last).clamp(-ETA_LIMIT, ETA_LIMIT)))
        .collect()
}

fn decode(x: &[f64]) -> CategoricalDim {
    let mut eta: Vec<f64> = x[1..].to_vec();
    eta.push(0.0);
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = ex.iter().sum();
    CategoricalDim {
        rate: x[0].exp(),
        equilibrium: ex.iter().map(|e| e / total).collect(),
    }
}

fn clamp_coord(i: usize, v: f64) -> f64 {
    if i == 0 {
        v.clamp(LOG_RATE_RANGE.0, LOG_RATE_RANGE.1)
    } else {
        v.clamp(-ETA_LIMIT, ETA_LIMIT)
    }
}

/// Gradient of the log-marginal of dimension `dim` with respect to
/// `(log lambda_d, eta_0, ..., eta_{K-2})`, with its value.
pub fn multinomial_dim_gradient(
    g: &Genealogy,
    data: &DataMatrix,
    params: &KernelParams,
    dim: usize,
) -> Result<(f64, Vec<f64>)> {
    let KernelParams::Multinomial { dims } = params else {
        return Err(Error::Unsupported("multinomial gradient needs multinomial parameters".into()));
    };
    params.check_data(data)?;
    let cd = &dims[dim];
    let prob = dim_problem(g, data, dim, cd.equilibrium.len());
    let x = encode(cd);
    let grads = (0..x.len()).map(|c| prob.directional(&x, Some(c)).d).collect();
    Ok((prob.value(&x), grads))
}

/// Coordinate-wise safeguarded Newton ascent on `log p(x | pi)` over each
/// dimension's rate and equilibrium.
pub fn estimate_multinomial_params(g: &Genealogy, data: &DataMatrix, params0: &KernelParams) -> Result<KernelParams> {
    let KernelParams::Multinomial { dims } = params0 else {
        return Err(Error::Unsupported("multinomial update needs multinomial parameters".into()));
    };
    params0.check_data(data)?;
    if g.n_leaves() != data.n_rows() {
        return Err(Error::Argument("genealogy and data sizes differ".into()));
    }
    let updated = dims
        .iter()
        .enumerate()
        .map(|(d, cd)| optimize_dim(&dim_problem(g, data, d, cd.equilibrium.len()), cd, d))
        .collect::<Result<Vec<_>>>()?;
    KernelParams::multinomial(updated)
}

fn optimize_dim(prob: &DimProblem, start: &CategoricalDim, dim: usize) -> Result<CategoricalDim> {
    let mut x: Vec<f64> = encode(start);
    for (i, v) in x.iter_mut().enumerate() {
        *v = clamp_coord(i, *v);
    }
    let mut value = prob.value(&x);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("log-marginal of dimension {dim} is {value}")));
    }
    for _ in 0..MAX_SWEEPS {
        let mut max_grad: f64 = 0.0;
        for c in 0..x.len() {
            let j = prob.directional(&x, Some(c));
            if !j.d.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in dimension {dim}")));
            }
            max_grad = max_grad.max(j.d.abs());
            if j.d.abs() < GRAD_TOL {
                continue;
            }
            let mut step = if j.dd < 0.0 { -j.d / j.dd } else { j.d.signum() };
            step = step.clamp(-2.0, 2.0);
            for _ in 0..MAX_HALVINGS {
                let mut trial = x.clone();
                trial[c] = clamp_coord(c, x[c] + step);
                let v = prob.value(&trial);
                if v >= value {
                    x = trial;
                    value = v;
                    break;
                }
                step *= 0.5;
            }
        }
        if max_grad < GRAD_TOL {
            break;
        }
    }
    Ok(decode(&x))
}
