use super::duration::{self, DurationObjective};
use super::{CategoricalDim, KernelParams, MessageBody, SubtreeMessage};
use crate::error::{Error, Result};

type Side<'a> = (&'a [Vec<f64>], &'a [bool], f64);

pub(super) fn leaf(row: &[Option<f64>], dims: &[CategoricalDim]) -> Result<MessageBody> {
    let mut vectors = Vec::with_capacity(dims.len());
    let mut observed = Vec::with_capacity(dims.len());
    for (d, (x, dim)) in row.iter().zip(dims).enumerate() {
        let k = dim.equilibrium.len();
        match x {
            Some(v) => {
                let c = *v as usize;
                if v.fract() != 0.0 || *v < 0.0 || c >= k {
                    return Err(Error::data(None, Some(d), format!("category {v} outside 0..{k}")));
                }
                let mut m = vec![0.0; k];
                m[c] = 1.0 / dim.equilibrium[c];
                vectors.push(m);
                observed.push(true);
            }
            None => {
                vectors.push(vec![1.0; k]);
                observed.push(false);
            }
        }
    }
    Ok(MessageBody::Categorical { vectors, observed })
}

fn overlap(q: &[f64], a: &[f64], b: &[f64]) -> f64 {
    q.iter().zip(a).zip(b).map(|((q, a), b)| q * a * b).sum()
}

fn dim_z(dim: &CategoricalDim, a: &[f64], ta: f64, b: &[f64], tb: f64, t: f64) -> f64 {
    let decay = (dim.rate * (2.0 * t - ta - tb)).exp();
    1.0 - decay * (1.0 - overlap(&dim.equilibrium, a, b))
}

pub(super) fn log_z(dims: &[CategoricalDim], l: (&[Vec<f64>], f64), r: (&[Vec<f64>], f64), t: f64) -> Result<f64> {
    let mut total = 0.0;
    for (d, dim) in dims.iter().enumerate() {
        let z = dim_z(dim, &l.0[d], l.1, &r.0[d], r.1, t);
        if !(z > 0.0) {
            return Err(Error::DegenerateLikelihood { dim: d });
        }
        total += z.ln();
    }
    Ok(total)
}

pub(super) fn merge(dims: &[CategoricalDim], l: Side, r: Side, t: f64) -> Result<(f64, MessageBody)> {
    let mut total = 0.0;
    let mut vectors = Vec::with_capacity(dims.len());
    let mut observed = Vec::with_capacity(dims.len());
    for (d, dim) in dims.iter().enumerate() {
        let (a, b) = (&l.0[d], &r.0[d]);
        observed.push(l.1[d] || r.1[d]);
        if !l.1[d] && !r.1[d] {
            vectors.push(vec![1.0; a.len()]);
            continue;
        }
        let ea = (dim.rate * (t - l.2)).exp();
        let eb = (dim.rate * (t - r.2)).exp();
        let mut m: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(a, b)| (1.0 - ea * (1.0 - a)) * (1.0 - eb * (1.0 - b)))
            .collect();
        let z = dim_z(dim, a, l.2, b, r.2, t);
        if !(z > 0.0) {
            return Err(Error::DegenerateLikelihood { dim: d });
        }
        total += z.ln();
        // renormalize against drift in the identity q . M = 1
        let norm = overlap(&dim.equilibrium, &m, &vec![1.0; m.len()]);
        if !(norm > 0.0) {
            return Err(Error::DegenerateLikelihood { dim: d });
        }
        m.iter_mut().for_each(|v| *v /= norm);
        vectors.push(m);
    }
    Ok((total, MessageBody::Categorical { vectors, observed }))
}

/// `g(delta) = -rate * delta + sum_d log(1 - u_d e^{-2 lambda_d delta})`.
#[derive(Clone, Debug)]
pub struct MultinomialDuration {
    rate: f64,
    /// Per dimension `(u_d, lambda_d)`.
    terms: Vec<(f64, f64)>,
}

impl MultinomialDuration {
    pub fn new(
        left: &SubtreeMessage,
        right: &SubtreeMessage,
        prev_time: f64,
        rate: f64,
        params: &KernelParams,
    ) -> Result<Self> {
        let (
            KernelParams::Multinomial { dims },
            MessageBody::Categorical { vectors: a, .. },
            MessageBody::Categorical { vectors: b, .. },
        ) = (params, &left.body, &right.body)
        else {
            return Err(Error::Argument("multinomial objective needs categorical messages".into()));
        };
        if prev_time > left.time.min(right.time) {
            return Err(Error::TimeOrder {
                merge_time: prev_time,
                child_time: left.time.min(right.time),
            });
        }
        let terms = dims
            .iter()
            .enumerate()
            .filter_map(|(d, dim)| {
                let u = (dim.rate * (2.0 * prev_time - left.time - right.time)).exp()
                    * (1.0 - overlap(&dim.equilibrium, &a[d], &b[d]));
                (u != 0.0).then_some((u, dim.rate))
            })
            .collect();
        Ok(MultinomialDuration { rate, terms })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl DurationObjective for MultinomialDuration {
    fn value(&self, delta: f64) -> f64 {
        -self.rate * delta
            + self
                .terms
                .iter()
                .map(|&(u, l)| (-u * (-2.0 * l * delta).exp()).ln_1p())
                .sum::<f64>()
    }

    fn slope(&self, delta: f64) -> f64 {
        -self.rate
            + self
                .terms
                .iter()
                .map(|&(u, l)| {
                    let w = u * (-2.0 * l * delta).exp();
                    2.0 * l * w / (1.0 - w)
                })
                .sum::<f64>()
    }

    fn curvature(&self, delta: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(u, l)| {
                let w = u * (-2.0 * l * delta).exp();
                -4.0 * l * l * w / ((1.0 - w) * (1.0 - w))
            })
            .sum()
    }

    fn decreasing_beyond(&self) -> f64 {
        let bound = |d: f64| -> f64 {
            self.terms
                .iter()
                .filter(|t| t.0 > 0.0)
                .map(|&(u, l)| {
                    let w = u * (-2.0 * l * d).exp();
                    2.0 * l * w / (1.0 - w)
                })
                .sum()
        };
        if !self.terms.iter().any(|t| t.0 > 0.0) {
            return 0.0;
        }
        let min_rate = self.terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let mut d = 1e-3 / min_rate.max(1e-300);
        while !(bound(d) < self.rate) {
            d *= 2.0;
            if !d.is_finite() {
                break;
            }
        }
        d
    }
}

pub fn optimal_delta_multinomial(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Argument(format!("rate must be positive, got {rate}")));
    }
    let obj = MultinomialDuration::new(left, right, prev_time, rate, params)?;
    duration::global_max(&obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{leaf_message, merge as kmerge};

    fn binary(rate: f64, dims: usize) -> KernelParams {
        KernelParams::uniform_multinomial(&vec![2; dims], rate).unwrap()
    }

    #[test]
    fn disagreeing_pair_matches_known_optimum() {
        // Z = 1 - e^{-2 delta}, rate 1: optimum at ln(3)/2
        let p = binary(1.0, 1);
        let a = leaf_message(&[Some(0.0)], &p).unwrap();
        let b = leaf_message(&[Some(1.0)], &p).unwrap();
        let d = optimal_delta_multinomial(&a, &b, 0.0, 1.0, &p).unwrap();
        assert!((d - 0.5 * 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn agreeing_pair_merges_immediately() {
        let p = binary(1.0, 3);
        let a = leaf_message(&[Some(0.0), Some(1.0), None], &p).unwrap();
        let b = leaf_message(&[Some(0.0), Some(1.0), Some(0.0)], &p).unwrap();
        assert_eq!(optimal_delta_multinomial(&a, &b, 0.0, 1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn merge_probability_of_pair() {
        let p = binary(0.7, 1);
        let a = leaf_message(&[Some(0.0)], &p).unwrap();
        let b = leaf_message(&[Some(1.0)], &p).unwrap();
        let t = -0.4f64;
        let r = kmerge(&a, &b, t, &p).unwrap();
        let stay = (0.7 * t).exp();
        // joint P(0,1) = sum_root q_r P(0|r) P(1|r); divided by q_0 q_1
        let p0_given0 = stay + (1.0 - stay) * 0.5;
        let p1_given0 = (1.0 - stay) * 0.5;
        let joint = 0.5 * p0_given0 * p1_given0 * 2.0;
        assert!((r.log_z - (joint / 0.25).ln()).abs() < 1e-12);
        let MessageBody::Categorical { vectors, .. } = &r.message.body else {
            unreachable!()
        };
        let s: f64 = vectors[0].iter().map(|v| 0.5 * v).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disagreeing_leaves_at_time_zero_are_degenerate() {
        let p = binary(1.0, 1);
        let a = leaf_message(&[Some(0.0)], &p).unwrap();
        let b = leaf_message(&[Some(1.0)], &p).unwrap();
        assert!(matches!(
            kmerge(&a, &b, 0.0, &p),
            Err(Error::DegenerateLikelihood { dim: 0 })
        ));
    }

    #[test]
    fn unobserved_dimensions_contribute_nothing() {
        let p = binary(1.0, 2);
        let a = leaf_message(&[None, Some(1.0)], &p).unwrap();
        let b = leaf_message(&[None, Some(1.0)], &p).unwrap();
        let r = kmerge(&a, &b, -1.0, &p).unwrap();
        let only = {
            let p1 = binary(1.0, 1);
            let a = leaf_message(&[Some(1.0)], &p1).unwrap();
            let b = leaf_message(&[Some(1.0)], &p1).unwrap();
            kmerge(&a, &b, -1.0, &p1).unwrap().log_z
        };
        assert!((r.log_z - only).abs() < 1e-15);
    }
}
