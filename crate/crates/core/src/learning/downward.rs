//! Downward messages, missing-value restoration and the Brownian predictive
//! density for a new row.

use std::f64::consts::PI;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::Genealogy;
use crate::kernels::{self, KernelParams, MessageBody, SubtreeMessage};

/// Time samples per coalescent interval in the predictive density.
pub const SAMPLES_PER_INTERVAL: usize = 10;

/// Belief about a node's latent value from everything outside its subtree,
/// expressed at the node's formation time.
#[derive(Clone, Debug, PartialEq)]
pub enum DownMessage {
    /// Variance `lambda * var_scale`; an infinite scale means no information.
    Gaussian { mean: Vec<f64>, var_scale: Vec<f64> },
    /// Per-dimension distribution over categories, each summing to 1.
    Categorical { probs: Vec<Vec<f64>> },
}

/// Upward and downward messages for every node.
#[derive(Clone, Debug)]
pub struct TreeMessages {
    pub up: Vec<SubtreeMessage>,
    pub down: Vec<DownMessage>,
    pub log_z: Vec<f64>,
}

/// Product of two Gaussians given as (mean, scale); infinite scales are flat.
fn gauss_product(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
    match (v1.is_finite(), v2.is_finite()) {
        (false, false) => (0.0, f64::INFINITY),
        (true, false) => (m1, v1),
        (false, true) => (m2, v2),
        (true, true) => {
            let s = v1 + v2;
            if s == 0.0 {
                (m1, 0.0)
            } else {
                ((m1 * v2 + m2 * v1) / s, v1 * v2 / s)
            }
        }
    }
}

fn gaussian(msg: &SubtreeMessage) -> (&[f64], &[f64]) {
    match &msg.body {
        MessageBody::Gaussian { mean, var_scale } => (mean, var_scale),
        MessageBody::Categorical { .. } => unreachable!("gaussian message expected"),
    }
}

fn categorical(msg: &SubtreeMessage) -> &[Vec<f64>] {
    match &msg.body {
        MessageBody::Categorical { vectors, .. } => vectors,
        MessageBody::Gaussian { .. } => unreachable!("categorical message expected"),
    }
}

/// Message on the edge into child `c` at its parent's time: the parent's down
/// message combined with the sibling's up message.
fn edge_at_parent(
    params: &KernelParams,
    down_parent: &DownMessage,
    sibling: &SubtreeMessage,
    parent_time: f64,
) -> DownMessage {
    match (params, down_parent) {
        (KernelParams::Brownian { .. }, DownMessage::Gaussian { mean, var_scale }) => {
            let (ms, vs) = gaussian(sibling);
            let elapsed = sibling.time - parent_time;
            let (mean, var_scale) = (0..mean.len())
                .map(|d| gauss_product(mean[d], var_scale[d], ms[d], vs[d] + elapsed))
                .unzip();
            DownMessage::Gaussian { mean, var_scale }
        }
        (KernelParams::Multinomial { dims }, DownMessage::Categorical { probs }) => {
            let ms = categorical(sibling);
            let probs = dims
                .iter()
                .enumerate()
                .map(|(d, dim)| {
                    let decay = (dim.rate * (parent_time - sibling.time)).exp();
                    let mut e: Vec<f64> = probs[d]
                        .iter()
                        .zip(&ms[d])
                        .map(|(o, m)| o * (1.0 - decay * (1.0 - m)))
                        .collect();
                    normalize(&mut e);
                    e
                })
                .collect();
            DownMessage::Categorical { probs }
        }
        _ => unreachable!("message kinds match the kernel"),
    }
}

/// Moves an edge message from time `from` down to a later time `to`.
fn diffuse(params: &KernelParams, msg: &DownMessage, from: f64, to: f64) -> DownMessage {
    let tau = to - from;
    match (params, msg) {
        (KernelParams::Brownian { .. }, DownMessage::Gaussian { mean, var_scale }) => DownMessage::Gaussian {
            mean: mean.clone(),
            var_scale: var_scale.iter().map(|v| v + tau).collect(),
        },
        (KernelParams::Multinomial { dims }, DownMessage::Categorical { probs }) => DownMessage::Categorical {
            probs: dims
                .iter()
                .zip(probs)
                .map(|(dim, e)| {
                    let stay = (-dim.rate * tau).exp();
                    let total: f64 = e.iter().sum();
                    let mut o: Vec<f64> = e
                        .iter()
                        .zip(&dim.equilibrium)
                        .map(|(x, q)| stay * x + (1.0 - stay) * q * total)
                        .collect();
                    normalize(&mut o);
                    o
                })
                .collect(),
        },
        _ => unreachable!("message kinds match the kernel"),
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Two-pass belief propagation. The root's down message is the flat measure
/// (Brownian) or the equilibrium (multinomial).
pub fn downward_pass(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<TreeMessages> {
    let (up, log_z) = kernels::upward_pass(g, data, params)?;
    let total = g.node_count();
    let times = g.node_times();
    let root_down = match params {
        KernelParams::Brownian { lambda } => DownMessage::Gaussian {
            mean: vec![0.0; lambda.len()],
            var_scale: vec![f64::INFINITY; lambda.len()],
        },
        KernelParams::Multinomial { dims } => DownMessage::Categorical {
            probs: dims.iter().map(|d| d.equilibrium.clone()).collect(),
        },
    };
    let mut down: Vec<Option<DownMessage>> = vec![None; total];
    down[total - 1] = Some(root_down);
    for node in (g.n_leaves()..total).rev() {
        let (l, r) = g.children(node).expect("internal node");
        let parent = down[node].clone().expect("parent visited first");
        for (c, s) in [(l, r), (r, l)] {
            let edge = edge_at_parent(params, &parent, &up[s], times[node]);
            down[c] = Some(diffuse(params, &edge, times[node], times[c]));
        }
    }
    Ok(TreeMessages {
        up,
        down: down.into_iter().map(|d| d.expect("all nodes visited")).collect(),
        log_z,
    })
}

/// Posterior of one restored cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CellPosterior {
    Gaussian { mean: f64, var: f64 },
    Categorical(Vec<f64>),
}

impl CellPosterior {
    pub fn point(&self) -> f64 {
        match self {
            CellPosterior::Gaussian { mean, .. } => *mean,
            CellPosterior::Categorical(p) => argmax(p) as f64,
        }
    }

    /// Log probability (categorical) or log density (Gaussian) of `value`.
    pub fn log_prob(&self, value: f64) -> f64 {
        match self {
            CellPosterior::Gaussian { mean, var } => {
                -0.5 * (2.0 * PI * var).ln() - (value - mean).powi(2) / (2.0 * var)
            }
            CellPosterior::Categorical(p) => p.get(value as usize).map_or(f64::NEG_INFINITY, |x| x.ln()),
        }
    }
}

/// First index of the largest entry.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoredCell {
    pub row: usize,
    pub column: usize,
    pub posterior: CellPosterior,
}

#[derive(Clone, Debug)]
pub struct Restoration {
    pub filled: DataMatrix,
    pub cells: Vec<RestoredCell>,
}

/// Posterior of a single leaf cell given the rest of the tree.
pub fn cell_posterior(msgs: &TreeMessages, params: &KernelParams, row: usize, col: usize) -> Result<CellPosterior> {
    match (&msgs.down[row], params) {
        (DownMessage::Gaussian { mean, var_scale }, KernelParams::Brownian { lambda }) => {
            if !var_scale[col].is_finite() {
                return Err(Error::Unrestorable { column: col });
            }
            Ok(CellPosterior::Gaussian {
                mean: mean[col],
                var: lambda[col] * var_scale[col],
            })
        }
        (DownMessage::Categorical { probs }, KernelParams::Multinomial { .. }) => {
            Ok(CellPosterior::Categorical(probs[col].clone()))
        }
        _ => unreachable!("message kinds match the kernel"),
    }
}

/// Fills every missing cell with its posterior point estimate: the mean for
/// real columns and the most probable category otherwise.
pub fn restore_missing(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<Restoration> {
    let msgs = downward_pass(g, data, params)?;
    let mut filled = data.clone();
    let mut cells = Vec::new();
    for (row, col) in data.missing_cells() {
        let posterior = cell_posterior(&msgs, params, row, col)?;
        filled.set(row, col, Some(posterior.point()))?;
        cells.push(RestoredCell { row, column: col, posterior });
    }
    Ok(Restoration { filled, cells })
}

/// Predictive density of a new fully observed row under the Brownian model,
/// given a genealogy of the existing rows.
///
/// The new lineage attaches to each existing lineage at rate 1 while it is
/// alive. Every interval between events is split into equal sub-intervals;
/// each contributes the exact attachment probability of the sub-interval
/// times the Gaussian density evaluated at its midpoint. Above the root, the
/// window has the width of the longest duration in the tree and its last
/// sample absorbs the remaining tail probability.
pub fn predictive_density_brownian(
    g: &Genealogy,
    data: &DataMatrix,
    params: &KernelParams,
    y_new: &[f64],
) -> Result<f64> {
    let KernelParams::Brownian { lambda } = params else {
        return Err(Error::Unsupported("predictive density is defined for the brownian model".into()));
    };
    if y_new.len() != lambda.len() {
        return Err(Error::Argument(format!(
            "query has {} values, model has {} dimensions",
            y_new.len(),
            lambda.len()
        )));
    }
    let msgs = downward_pass(g, data, params)?;
    let times = g.node_times();
    let parents = g.parents();
    let n = g.n_leaves();
    let root = g.root();
    if let Some(d) = (0..lambda.len()).find(|&d| !gaussian(&msgs.up[root]).1[d].is_finite()) {
        return Err(Error::Data {
            row: None,
            column: Some(d),
            message: "column has no observed value".into(),
        });
    }

    let edges: Vec<Option<DownMessage>> = (0..g.node_count())
        .map(|node| {
            parents[node].map(|p| {
                let s = sibling_of(g, p, node);
                edge_at_parent(params, &msgs.down[p], &msgs.up[s], times[p])
            })
        })
        .collect();
    // density of y_new when it branches off lineage `node` at time t
    let log_gauss = |node: usize, t: f64| -> f64 {
        let (mu, vu) = gaussian(&msgs.up[node]);
        let mut total = 0.0;
        for d in 0..lambda.len() {
            let (mut y0, mut v0) = (mu[d], vu[d] + times[node] - t);
            if let (Some(DownMessage::Gaussian { mean, var_scale }), Some(p)) = (&edges[node], parents[node]) {
                let (m, v) = gauss_product(y0, v0, mean[d], var_scale[d] + t - times[p]);
                y0 = m;
                v0 = v;
            }
            let var = lambda[d] * (v0 - t);
            total += -0.5 * (2.0 * PI * var).ln() - (y_new[d] - y0).powi(2) / (2.0 * var);
        }
        total
    };

    let mut density = 0.0;
    let mut hazard = 0.0; // cumulative attachment rate up to the current interval
    let mut alive: Vec<usize> = (0..n).collect();
    let mut lower = 0.0;
    for (i, e) in g.events().iter().enumerate() {
        let k = alive.len() as f64;
        let width = e.delta / SAMPLES_PER_INTERVAL as f64;
        for j in 0..SAMPLES_PER_INTERVAL {
            let a = j as f64 * width;
            let mass = ((-hazard - k * a).exp() - (-hazard - k * (a + width)).exp()) / k;
            let t = lower - a - 0.5 * width;
            for &node in &alive {
                density += mass * log_gauss(node, t).exp();
            }
        }
        hazard += k * e.delta;
        lower -= e.delta;
        alive.retain(|&x| x != e.left && x != e.right);
        alive.push(n + i);
    }
    let window = g.events().iter().map(|e| e.delta).fold(0.0, f64::max);
    let width = window / SAMPLES_PER_INTERVAL as f64;
    let remaining = (-hazard).exp();
    for j in 0..SAMPLES_PER_INTERVAL {
        let a = j as f64 * width;
        let mass = if j + 1 == SAMPLES_PER_INTERVAL {
            remaining * (-a).exp()
        } else {
            remaining * ((-a).exp() - (-a - width).exp())
        };
        let t = lower - a - 0.5 * width;
        density += mass * log_gauss(root, t).exp();
    }
    Ok(density)
}

fn sibling_of(g: &Genealogy, parent: usize, child: usize) -> usize {
    let (l, r) = g.children(parent).expect("internal node");
    if l == child { r } else { l }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::{sample, Event};
    use crate::util::derive_rng;
    use rand::Rng;

    #[test]
    fn two_leaf_down_message() {
        let data = DataMatrix::from_real_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let p = KernelParams::isotropic_brownian(1, 1.0).unwrap();
        let g = Genealogy::new(2, vec![Event { left: 0, right: 1, delta: 0.75 }]).unwrap();
        let m = downward_pass(&g, &data, &p).unwrap();
        assert_eq!(
            m.down[0],
            DownMessage::Gaussian {
                mean: vec![2.0],
                var_scale: vec![1.5]
            }
        );
    }

    fn random_tree_data(seed: u64, n: usize, categorical: bool) -> (Genealogy, DataMatrix, KernelParams) {
        let mut rng = derive_rng(seed, &[]);
        let g = sample(n, &mut rng).unwrap();
        if categorical {
            let rows: Vec<Vec<usize>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0..3)).collect()).collect();
            let mut data = DataMatrix::from_categorical_rows(&rows, 3).unwrap();
            data.set(0, 1, None).unwrap();
            let p = KernelParams::multinomial(
                (0..3)
                    .map(|d| crate::kernels::CategoricalDim {
                        rate: 0.5 + d as f64,
                        equilibrium: vec![0.2, 0.3, 0.5],
                    })
                    .collect(),
            )
            .unwrap();
            (g, data, p)
        } else {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut data = DataMatrix::from_real_rows(&rows).unwrap();
            data.set(1, 0, None).unwrap();
            (g, data, KernelParams::brownian(vec![0.7, 1.3]).unwrap())
        }
    }

    #[test]
    fn up_down_consistency() {
        for (seed, cat) in [(1, false), (2, true), (3, false), (4, true)] {
            let (g, data, p) = random_tree_data(seed, 6, cat);
            let m = downward_pass(&g, &data, &p).unwrap();
            let times = g.node_times();
            for node in g.n_leaves()..g.node_count() {
                let (l, r) = g.children(node).unwrap();
                let at_node = edge_at_parent(&p, &m.down[node], &m.up[node], times[node]);
                for (c, sib) in [(l, r), (r, l)] {
                    let edge = edge_at_parent(&p, &m.down[node], &m.up[sib], times[node]);
                    let via_child = edge_at_parent(&p, &edge, &m.up[c], times[node]);
                    assert_close(&at_node, &via_child);
                }
            }
        }
    }

    fn assert_close(a: &DownMessage, b: &DownMessage) {
        match (a, b) {
            (DownMessage::Gaussian { mean: ma, var_scale: va }, DownMessage::Gaussian { mean: mb, var_scale: vb }) => {
                for d in 0..ma.len() {
                    assert!((ma[d] - mb[d]).abs() < 1e-10 && (va[d] - vb[d]).abs() < 1e-10);
                }
            }
            (DownMessage::Categorical { probs: pa }, DownMessage::Categorical { probs: pb }) => {
                for (x, y) in pa.iter().zip(pb) {
                    for (u, v) in x.iter().zip(y) {
                        assert!((u - v).abs() < 1e-10);
                    }
                }
            }
            _ => panic!("kind mismatch"),
        }
    }

    #[test]
    fn categorical_down_messages_are_distributions() {
        let (g, data, p) = random_tree_data(9, 7, true);
        let m = downward_pass(&g, &data, &p).unwrap();
        for d in &m.down {
            let DownMessage::Categorical { probs } = d else { unreachable!() };
            for v in probs {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restoration_follows_recent_sibling() {
        let data = DataMatrix::new(
            vec!["a".into()],
            vec![crate::data::ColumnKind::Categorical(2)],
            vec![vec![Some(0.0)], vec![None], vec![Some(1.0)]],
        )
        .unwrap();
        let p = KernelParams::uniform_multinomial(&[2], 1.0).unwrap();
        let g = Genealogy::new(3, vec![Event { left: 0, right: 1, delta: 0.01 }, Event { left: 2, right: 3, delta: 2.0 }]).unwrap();
        let r = restore_missing(&g, &data, &p).unwrap();
        assert_eq!(r.filled.category(1, 0), Some(0));
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.filled.category(0, 0), Some(0));
    }

    #[test]
    fn predictive_prefers_the_data_range() {
        let data = DataMatrix::from_real_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let p = KernelParams::isotropic_brownian(1, 1.0).unwrap();
        let g = Genealogy::new(2, vec![Event { left: 0, right: 1, delta: 1.0 }]).unwrap();
        let mid = predictive_density_brownian(&g, &data, &p, &[1.0]).unwrap();
        let far = predictive_density_brownian(&g, &data, &p, &[8.0]).unwrap();
        assert!(mid > far);
    }

    #[test]
    fn predictive_rejects_multinomial() {
        let data = DataMatrix::from_categorical_rows(&[vec![0], vec![1]], 2).unwrap();
        let p = KernelParams::uniform_multinomial(&[2], 1.0).unwrap();
        let g = Genealogy::new(2, vec![Event { left: 0, right: 1, delta: 1.0 }]).unwrap();
        assert!(matches!(
            predictive_density_brownian(&g, &data, &p, &[0.0]),
            Err(Error::Unsupported(_))
        ));
    }
}
