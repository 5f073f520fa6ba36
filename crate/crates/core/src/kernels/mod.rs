//! Observation models on the tree and belief-propagation messages.
//!
//! Two kernels are supported: Brownian diffusion with a diagonal covariance
//! and an independent-sites mutation process on categorical vectors. Each
//! subtree is summarized by a [`SubtreeMessage`]; merging two messages at a
//! time `t` yields the local likelihood `log Z` and the parent message.
//!
//! The Brownian equilibrium is an improper flat measure, so the root term is
//! fixed to 0 for that kernel. Absolute Brownian marginals are therefore
//! comparative quantities: they equal the density of the leaf contrasts, and
//! differences between trees on the same data are exact.

mod brownian;
pub mod duration;
mod multinomial;

pub use brownian::{BrownianDuration, optimal_delta_brownian};
pub use multinomial::{MultinomialDuration, optimal_delta_multinomial};

use crate::data::{ColumnKind, DataMatrix};
use crate::error::{Error, Result};
use crate::genealogy::Genealogy;

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDim {
    /// Mutation rate `lambda_d`.
    pub rate: f64,
    /// Equilibrium distribution `q_d`; its length is the category count.
    pub equilibrium: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelParams {
    /// Diagonal of the diffusion covariance, one entry per dimension.
    Brownian { lambda: Vec<f64> },
    Multinomial { dims: Vec<CategoricalDim> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Brownian,
    Multinomial,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brownian" => Ok(ModelKind::Brownian),
            "multinomial" => Ok(ModelKind::Multinomial),
            _ => Err(Error::Argument(format!("unknown model '{s}'"))),
        }
    }
}

impl KernelParams {
    pub fn brownian(lambda: Vec<f64>) -> Result<Self> {
        let p = KernelParams::Brownian { lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn multinomial(dims: Vec<CategoricalDim>) -> Result<Self> {
        let p = KernelParams::Multinomial { dims };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic_brownian(dims: usize, lambda: f64) -> Result<Self> {
        Self::brownian(vec![lambda; dims])
    }

    /// Uniform equilibria with a shared mutation rate.
    pub fn uniform_multinomial(levels: &[usize], rate: f64) -> Result<Self> {
        Self::multinomial(
            levels
                .iter()
                .map(|&k| CategoricalDim {
                    rate,
                    equilibrium: vec![1.0 / k as f64; k],
                })
                .collect(),
        )
    }

    /// Starting parameters for a data set: unit diffusion for real data;
    /// rate 1 with add-one smoothed empirical frequencies for categorical data.
    pub fn initial_for(data: &DataMatrix, model: ModelKind) -> Result<Self> {
        match model {
            ModelKind::Brownian => {
                if !data.is_all_real() {
                    return Err(Error::Unsupported("brownian model needs real-valued columns".into()));
                }
                Self::isotropic_brownian(data.n_cols(), 1.0)
            }
            ModelKind::Multinomial => {
                let mut dims = Vec::with_capacity(data.n_cols());
                for c in 0..data.n_cols() {
                    let ColumnKind::Categorical(k) = data.kind(c) else {
                        return Err(Error::Unsupported(
                            "multinomial model needs categorical columns".into(),
                        ));
                    };
                    let mut counts = vec![1.0; k];
                    for r in 0..data.n_rows() {
                        if let Some(x) = data.category(r, c) {
                            counts[x] += 1.0;
                        }
                    }
                    let total: f64 = counts.iter().sum();
                    dims.push(CategoricalDim {
                        rate: 1.0,
                        equilibrium: counts.into_iter().map(|v| v / total).collect(),
                    });
                }
                Self::multinomial(dims)
            }
        }
    }

    pub fn model(&self) -> ModelKind {
        match self {
            KernelParams::Brownian { .. } => ModelKind::Brownian,
            KernelParams::Multinomial { .. } => ModelKind::Multinomial,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            KernelParams::Brownian { lambda } => lambda.len(),
            KernelParams::Multinomial { dims } => dims.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelParams::Brownian { lambda } => {
                if let Some((d, l)) = lambda.iter().enumerate().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
                    return Err(Error::Argument(format!("lambda[{d}] = {l} must be positive")));
                }
            }
            KernelParams::Multinomial { dims } => {
                for (d, dim) in dims.iter().enumerate() {
                    if !(dim.rate > 0.0 && dim.rate.is_finite()) {
                        return Err(Error::Argument(format!("rate[{d}] = {} must be positive", dim.rate)));
                    }
                    if dim.equilibrium.len() < 2 {
                        return Err(Error::Argument(format!("dimension {d} needs at least 2 categories")));
                    }
                    if dim.equilibrium.iter().any(|&q| !(q > 0.0)) {
                        return Err(Error::Argument(format!("equilibrium of dimension {d} has a non-positive entry")));
                    }
                    let s: f64 = dim.equilibrium.iter().sum();
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::Argument(format!("equilibrium of dimension {d} sums to {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that the data columns match this model.
    pub fn check_data(&self, data: &DataMatrix) -> Result<()> {
        if data.n_cols() != self.dims() {
            return Err(Error::Argument(format!(
                "data has {} columns but parameters describe {}",
                data.n_cols(),
                self.dims()
            )));
        }
        match self {
            KernelParams::Brownian { .. } => {
                if let Some(c) = (0..data.n_cols()).find(|&c| data.kind(c) != ColumnKind::Real) {
                    return Err(Error::data(None, Some(c), "brownian model needs real-valued columns"));
                }
            }
            KernelParams::Multinomial { dims } => {
                for (c, dim) in dims.iter().enumerate() {
                    if data.kind(c) != ColumnKind::Categorical(dim.equilibrium.len()) {
                        return Err(Error::data(
                            None,
                            Some(c),
                            format!("expected cat:{} column", dim.equilibrium.len()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MessageBody {
    /// Gaussian message with mean `mean` and variance `lambda * var_scale` per
    /// dimension. An infinite scale marks a dimension unobserved in the subtree.
    Gaussian { mean: Vec<f64>, var_scale: Vec<f64> },
    /// Per-dimension likelihood vectors normalized so that `q_d . M_d = 1`.
    Categorical { vectors: Vec<Vec<f64>>, observed: Vec<bool> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubtreeMessage {
    /// Formation time of the subtree root (0 for leaves).
    pub time: f64,
    /// Sum of `log Z` over all merges inside the subtree.
    pub log_norm: f64,
    pub body: MessageBody,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeResult {
    pub log_z: f64,
    pub message: SubtreeMessage,
}

/// Message for one observed row.
pub fn leaf_message(row: &[Option<f64>], params: &KernelParams) -> Result<SubtreeMessage> {
    if row.len() != params.dims() {
        return Err(Error::data(
            None,
            None,
            format!("row has {} values, model has {} dimensions", row.len(), params.dims()),
        ));
    }
    let body = match params {
        KernelParams::Brownian { .. } => brownian::leaf(row)?,
        KernelParams::Multinomial { dims } => multinomial::leaf(row, dims)?,
    };
    Ok(SubtreeMessage {
        time: 0.0,
        log_norm: 0.0,
        body,
    })
}

/// Tree-independent normalizer of the leaf messages: `sum_d log q_d(x_d)` over
/// observed categorical cells, 0 for Brownian point masses.
pub fn leaf_log_term(row: &[Option<f64>], params: &KernelParams) -> f64 {
    match params {
        KernelParams::Brownian { .. } => 0.0,
        KernelParams::Multinomial { dims } => row
            .iter()
            .zip(dims)
            .filter_map(|(x, dim)| x.map(|v| dim.equilibrium[v as usize].ln()))
            .sum(),
    }
}

pub fn data_leaf_log_term(data: &DataMatrix, params: &KernelParams) -> f64 {
    (0..data.n_rows())
        .map(|r| leaf_log_term(&data.row(r), params))
        .sum()
}

/// Merges two subtrees at time `t`, which must not be later than either child.
pub fn merge(left: &SubtreeMessage, right: &SubtreeMessage, t: f64, params: &KernelParams) -> Result<MergeResult> {
    check_order(left, right, t)?;
    let (log_z, body) = match (params, &left.body, &right.body) {
        (
            KernelParams::Brownian { lambda },
            MessageBody::Gaussian { mean: ml, var_scale: vl },
            MessageBody::Gaussian { mean: mr, var_scale: vr },
        ) => brownian::merge(lambda, (ml, vl, left.time), (mr, vr, right.time), t)?,
        (
            KernelParams::Multinomial { dims },
            MessageBody::Categorical { vectors: al, observed: ol },
            MessageBody::Categorical { vectors: ar, observed: or },
        ) => multinomial::merge(dims, (al, ol, left.time), (ar, or, right.time), t)?,
        _ => return Err(Error::Argument("message kind does not match the kernel".into())),
    };
    Ok(MergeResult {
        log_z,
        message: SubtreeMessage {
            time: t,
            log_norm: left.log_norm + right.log_norm + log_z,
            body,
        },
    })
}

/// `log Z` of a merge at time `t` without building the parent message.
pub fn merge_log_z(left: &SubtreeMessage, right: &SubtreeMessage, t: f64, params: &KernelParams) -> Result<f64> {
    check_order(left, right, t)?;
    match (params, &left.body, &right.body) {
        (
            KernelParams::Brownian { lambda },
            MessageBody::Gaussian { mean: ml, var_scale: vl },
            MessageBody::Gaussian { mean: mr, var_scale: vr },
        ) => brownian::log_z(lambda, (ml, vl, left.time), (mr, vr, right.time), t),
        (
            KernelParams::Multinomial { dims },
            MessageBody::Categorical { vectors: al, .. },
            MessageBody::Categorical { vectors: ar, .. },
        ) => multinomial::log_z(dims, (al, left.time), (ar, right.time), t),
        _ => Err(Error::Argument("message kind does not match the kernel".into())),
    }
}

fn check_order(left: &SubtreeMessage, right: &SubtreeMessage, t: f64) -> Result<()> {
    let child_time = left.time.min(right.time);
    if t > child_time || t.is_nan() {
        return Err(Error::TimeOrder {
            merge_time: t,
            child_time,
        });
    }
    Ok(())
}

/// Duration maximizing `-rate * delta + log Z` for a merge after `prev_time`.
pub fn optimal_delta(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<f64> {
    match params {
        KernelParams::Brownian { .. } => optimal_delta_brownian(left, right, prev_time, rate, params),
        KernelParams::Multinomial { .. } => optimal_delta_multinomial(left, right, prev_time, rate, params),
    }
}

/// Boxed duration objective for a candidate merge, used by samplers that
/// integrate over the duration.
pub fn duration_objective(
    left: &SubtreeMessage,
    right: &SubtreeMessage,
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<Box<dyn duration::DurationObjective + Send>> {
    Ok(match params {
        KernelParams::Brownian { .. } => Box::new(BrownianDuration::new(left, right, prev_time, rate, params)?),
        KernelParams::Multinomial { .. } => Box::new(MultinomialDuration::new(left, right, prev_time, rate, params)?),
    })
}

/// Log of the root term. Zero for both kernels: the multinomial message is
/// normalized against the equilibrium, and the flat Brownian root is a
/// tree-independent convention.
pub fn root_log_term(_root: &SubtreeMessage, _params: &KernelParams) -> f64 {
    0.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeLikelihood {
    pub log_prior: f64,
    /// `log p(x | pi)`.
    pub log_marginal: f64,
    /// `log p(x, pi)`.
    pub joint: f64,
}

/// Upward pass: messages for every node and `log Z` for every event.
pub fn upward_pass(
    g: &Genealogy,
    data: &DataMatrix,
    params: &KernelParams,
) -> Result<(Vec<SubtreeMessage>, Vec<f64>)> {
    if g.n_leaves() != data.n_rows() {
        return Err(Error::Argument(format!(
            "genealogy has {} leaves but data has {} rows",
            g.n_leaves(),
            data.n_rows()
        )));
    }
    params.check_data(data)?;
    let mut msgs = (0..data.n_rows())
        .map(|r| leaf_message(&data.row(r), params))
        .collect::<Result<Vec<_>>>()?;
    let mut log_zs = Vec::with_capacity(g.events().len());
    for (e, t) in g.events().iter().zip(g.merge_times()) {
        let m = merge(&msgs[e.left], &msgs[e.right], t, params)?;
        log_zs.push(m.log_z);
        msgs.push(m.message);
    }
    Ok((msgs, log_zs))
}

pub fn evaluate_tree(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<TreeLikelihood> {
    let (msgs, log_zs) = upward_pass(g, data, params)?;
    let root = msgs.last().expect("non-empty");
    let log_marginal = data_leaf_log_term(data, params) + log_zs.iter().sum::<f64>() + root_log_term(root, params);
    let log_prior = g.log_prior();
    Ok(TreeLikelihood {
        log_prior,
        log_marginal,
        joint: log_prior + log_marginal,
    })
}

/// `log p(x, pi)`.
pub fn joint_log_prob(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<f64> {
    evaluate_tree(g, data, params).map(|l| l.joint)
}

/// `log p(x | pi)`.
pub fn log_marginal(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<f64> {
    evaluate_tree(g, data, params).map(|l| l.log_marginal)
}
