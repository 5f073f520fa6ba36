use std::f64::consts::PI;

use super::duration::{self, DurationObjective};
use super::{KernelParams, MessageBody, SubtreeMessage};
use crate::error::{Error, Result};

type Side<'a> = (&'a [f64], &'a [f64], f64);

pub(super) fn leaf(row: &[Option<f64>]) -> Result<MessageBody> {
    let mut mean = Vec::with_capacity(row.len());
    let mut var_scale = Vec::with_capacity(row.len());
    for (d, x) in row.iter().enumerate() {
        match x {
            Some(v) if !v.is_finite() => {
                return Err(Error::data(None, Some(d), format!("non-finite value {v}")));
            }
            Some(v) => {
                mean.push(*v);
                var_scale.push(0.0);
            }
            None => {
                mean.push(0.0);
                var_scale.push(f64::INFINITY);
            }
        }
    }
    Ok(MessageBody::Gaussian { mean, var_scale })
}

fn dim_log_z(lambda: f64, diff: f64, s: f64, dim: usize) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::DegenerateLikelihood { dim });
    }
    Ok(-0.5 * (2.0 * PI * lambda * s).ln() - diff * diff / (2.0 * lambda * s))
}

pub(super) fn log_z(lambda: &[f64], l: Side, r: Side, t: f64) -> Result<f64> {
    let mut total = 0.0;
    for d in 0..lambda.len() {
        if l.1[d].is_finite() && r.1[d].is_finite() {
            let s = l.1[d] + l.2 - t + r.1[d] + r.2 - t;
            total += dim_log_z(lambda[d], l.0[d] - r.0[d], s, d)?;
        }
    }
    Ok(total)
}

pub(super) fn merge(lambda: &[f64], l: Side, r: Side, t: f64) -> Result<(f64, MessageBody)> {
    let dims = lambda.len();
    let mut mean = vec![0.0; dims];
    let mut var_scale = vec![f64::INFINITY; dims];
    let mut total = 0.0;
    for d in 0..dims {
        let a = l.1[d] + l.2 - t;
        let b = r.1[d] + r.2 - t;
        match (a.is_finite(), b.is_finite()) {
            (true, true) => {
                let s = a + b;
                total += dim_log_z(lambda[d], l.0[d] - r.0[d], s, d)?;
                var_scale[d] = a * b / s;
                mean[d] = (l.0[d] * b + r.0[d] * a) / s;
            }
            (true, false) => {
                mean[d] = l.0[d];
                var_scale[d] = a;
            }
            (false, true) => {
                mean[d] = r.0[d];
                var_scale[d] = b;
            }
            (false, false) => {}
        }
    }
    Ok((total, MessageBody::Gaussian { mean, var_scale }))
}

/// `g(delta) = -rate * delta + log Z` for a Brownian merge `delta` after `prev_time`.
#[derive(Clone, Debug)]
pub struct BrownianDuration {
    rate: f64,
    /// Per shared dimension: offset `B_d`, squared difference, lambda.
    terms: Vec<(f64, f64, f64)>,
}

impl BrownianDuration {
    pub fn new(
        left: &SubtreeMessage,
        right: &SubtreeMessage,
        prev_time: f64,
        rate: f64,
        params: &KernelParams,
    ) -> Result<Self> {
        let (
            KernelParams::Brownian { lambda },
            MessageBody::Gaussian { mean: ml, var_scale: vl },
            MessageBody::Gaussian { mean: mr, var_scale: vr },
        ) = (params, &left.body, &right.body)
        else {
            return Err(Error::Argument("brownian objective needs gaussian messages".into()));
        };
        if prev_time > left.time.min(right.time) {
            return Err(Error::TimeOrder {
                merge_time: prev_time,
                child_time: left.time.min(right.time),
            });
        }
        let terms = (0..lambda.len())
            .filter(|&d| vl[d].is_finite() && vr[d].is_finite())
            .map(|d| {
                let b = vl[d] + vr[d] + left.time + right.time - 2.0 * prev_time;
                let diff = ml[d] - mr[d];
                (b.max(0.0), diff * diff, lambda[d])
            })
            .collect();
        Ok(BrownianDuration { rate, terms })
    }

    /// Lambda-weighted squared distance `sum_d diff_d^2 / lambda_d`.
    pub fn scaled_distance(&self) -> f64 {
        self.terms.iter().map(|&(_, q, l)| q / l).sum()
    }

    pub fn shared_dims(&self) -> usize {
        self.terms.len()
    }

    /// The common offset when every shared dimension has the same `B_d`.
    pub fn common_offset(&self) -> Option<f64> {
        let first = self.terms.first()?.0;
        let tol = 1e-12 * first.abs().max(1.0);
        self.terms
            .iter()
            .all(|t| (t.0 - first).abs() <= tol)
            .then_some(first)
    }

    /// `-1/2 sum_d log(2 pi lambda_d)`.
    pub fn log_scale(&self) -> f64 {
        self.terms.iter().map(|&(_, _, l)| -0.5 * (2.0 * PI * l).ln()).sum()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Closed-form maximizer, valid when all shared dimensions share one offset.
    fn closed_form(&self, b: f64) -> f64 {
        let dims = self.terms.len() as f64;
        let dist = self.scaled_distance();
        let s = if dist == 0.0 {
            0.0
        } else {
            // stable root of rate s^2 + D s - dist = 0
            2.0 * dist / (dims + (dims * dims + 4.0 * self.rate * dist).sqrt())
        };
        ((s - b) / 2.0).max(0.0)
    }
}

impl DurationObjective for BrownianDuration {
    fn value(&self, delta: f64) -> f64 {
        -self.rate * delta
            + self
                .terms
                .iter()
                .map(|&(b, q, l)| {
                    let s = b + 2.0 * delta;
                    -0.5 * (2.0 * PI * l * s).ln() - q / (2.0 * l * s)
                })
                .sum::<f64>()
    }

    fn slope(&self, delta: f64) -> f64 {
        -self.rate
            + self
                .terms
                .iter()
                .map(|&(b, q, l)| {
                    let s = b + 2.0 * delta;
                    if s == 0.0 {
                        if q > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }
                    } else {
                        (q / l - s) / (s * s)
                    }
                })
                .sum::<f64>()
    }

    fn curvature(&self, delta: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(b, q, l)| {
                let s = b + 2.0 * delta;
                2.0 / (s * s) - 4.0 * q / (l * s * s * s)
            })
            .sum()
    }

    fn decreasing_beyond(&self) -> f64 {
        // each term's slope is below q/(l s^2) <= q/(4 l delta^2)
        (self.scaled_distance() / (4.0 * self.rate)).sqrt()
    }
}

pub fn optimal_delta_brownian(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Argument(format!("rate must be positive, got {rate}")));
    }
    let obj = BrownianDuration::new(left, right, prev_time, rate, params)?;
    if obj.terms.is_empty() {
        return Ok(0.0);
    }
    match obj.common_offset() {
        Some(b) => Ok(obj.closed_form(b)),
        None => duration::global_max(&obj),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{leaf_message, merge as kmerge};

    fn leaves(xs: &[&[Option<f64>]], p: &KernelParams) -> Vec<SubtreeMessage> {
        xs.iter().map(|x| leaf_message(x, p).unwrap()).collect()
    }

    #[test]
    fn worked_duration() {
        let p = KernelParams::isotropic_brownian(1, 1.0).unwrap();
        let m = leaves(&[&[Some(0.0)], &[Some(2.0)]], &p);
        let d = optimal_delta_brownian(&m[0], &m[1], 0.0, 1.0, &p).unwrap();
        assert!((d - (17f64.sqrt() - 1.0) / 4.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn closed_form_agrees_with_scan() {
        let p = KernelParams::brownian(vec![0.5, 2.0, 1.0]).unwrap();
        let m = leaves(
            &[&[Some(0.3), Some(-1.0), Some(2.0)], &[Some(1.1), Some(0.4), Some(-0.5)]],
            &p,
        );
        let obj = BrownianDuration::new(&m[0], &m[1], 0.0, 3.0, &p).unwrap();
        let closed = optimal_delta_brownian(&m[0], &m[1], 0.0, 3.0, &p).unwrap();
        let scanned = duration::global_max(&obj).unwrap();
        assert!((closed - scanned).abs() < 1e-8, "{closed} {scanned}");
    }

    #[test]
    fn missing_values_pass_through() {
        let p = KernelParams::isotropic_brownian(2, 1.0).unwrap();
        let m = leaves(&[&[Some(1.0), None], &[Some(3.0), Some(5.0)]], &p);
        let r = kmerge(&m[0], &m[1], -1.0, &p).unwrap();
        let MessageBody::Gaussian { mean, var_scale } = &r.message.body else {
            unreachable!()
        };
        assert_eq!(mean, &vec![2.0, 5.0]);
        assert_eq!(var_scale, &vec![0.5, 1.0]);
        let expected = -0.5 * (4.0 * PI).ln() - 4.0 / 4.0;
        assert!((r.log_z - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_variance_merge_is_degenerate() {
        let p = KernelParams::isotropic_brownian(1, 1.0).unwrap();
        let m = leaves(&[&[Some(1.0)], &[Some(1.0)]], &p);
        assert!(matches!(
            kmerge(&m[0], &m[1], 0.0, &p),
            Err(Error::DegenerateLikelihood { dim: 0 })
        ));
    }

    #[test]
    fn heterogeneous_offsets_use_scan() {
        let p = KernelParams::isotropic_brownian(2, 1.0).unwrap();
        let m = leaves(&[&[Some(0.0), None], &[Some(1.0), Some(0.0)], &[Some(2.0), Some(1.0)]], &p);
        let ab = kmerge(&m[0], &m[1], -0.5, &p).unwrap().message;
        let obj = BrownianDuration::new(&ab, &m[2], -0.5, 3.0, &p).unwrap();
        assert!(obj.common_offset().is_none());
        let d = optimal_delta_brownian(&ab, &m[2], -0.5, 3.0, &p).unwrap();
        let best = (0..100_000)
            .map(|k| k as f64 * 1e-5)
            .max_by(|a, b| obj.value(*a).total_cmp(&obj.value(*b)))
            .unwrap();
        assert!((d - best).abs() < 2e-5, "{d} {best}");
    }
}
