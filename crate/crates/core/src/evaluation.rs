//! Tree quality metrics, baselines and held-out predictive scores.

use crate::data::{ColumnKind, DataMatrix};
use crate::error::{Error, Result};
use crate::genealogy::{Event, Genealogy};
use crate::greedy::{greedy, GreedyVariant};
use crate::kernels::KernelParams;
use crate::learning::{cell_posterior, downward_pass, CellPosterior};
use crate::smc::{run_smc, Proposal, SmcConfig};
use crate::util::log_sum_exp;

fn check_labels(g: &Genealogy, labels: &[usize]) -> Result<()> {
    if labels.len() != g.n_leaves() {
        return Err(Error::Argument(format!(
            "{} labels for {} leaves",
            labels.len(),
            g.n_leaves()
        )));
    }
    Ok(())
}

/// Class counts of every node's leaf set.
fn class_counts(g: &Genealogy, labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let n = g.n_leaves();
    let mut counts: Vec<Vec<usize>> = labels
        .iter()
        .map(|&c| {
            let mut v = vec![0; k];
            v[c] += 1;
            v
        })
        .collect();
    for i in 0..g.events().len() {
        let (l, r) = g.children(n + i).expect("internal");
        let merged = counts[l].iter().zip(&counts[r]).map(|(a, b)| a + b).collect();
        counts.push(merged);
    }
    counts
}

/// Mean, over same-class leaf pairs, of the fraction of that class among the
/// leaves of the pair's smallest common subtree.
pub fn dendrogram_purity(g: &Genealogy, labels: &[usize]) -> Result<f64> {
    check_labels(g, labels)?;
    let counts = class_counts(g, labels);
    let n = g.n_leaves();
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..g.events().len() {
        let node = n + i;
        let (l, r) = g.children(node).expect("internal");
        let size: usize = counts[node].iter().sum();
        for k in 0..counts[node].len() {
            let p = (counts[l][k] * counts[r][k]) as f64;
            if p > 0.0 {
                pairs += p;
                total += p * counts[node][k] as f64 / size as f64;
            }
        }
    }
    if pairs == 0.0 {
        return Err(Error::UndefinedMetric("no two leaves share a class".into()));
    }
    Ok(total / pairs)
}

/// Interior nodes whose leaves all share one class, divided by `n - #classes`.
pub fn subtree_score(g: &Genealogy, labels: &[usize]) -> Result<f64> {
    check_labels(g, labels)?;
    let n = g.n_leaves();
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let denom = n - classes.len();
    if denom == 0 {
        return Err(Error::UndefinedMetric("every leaf has its own class".into()));
    }
    let counts = class_counts(g, labels);
    let pure = counts[n..]
        .iter()
        .filter(|c| c.iter().filter(|&&x| x > 0).count() == 1)
        .count();
    Ok(pure as f64 / denom as f64)
}

/// Fraction of leaves whose class equals the majority class of the sibling
/// subtree at their first merge. Majority ties go to the tied class whose
/// leaf merged most recently within that subtree, then to the smallest class.
pub fn loo_accuracy(g: &Genealogy, labels: &[usize]) -> Result<f64> {
    check_labels(g, labels)?;
    let n = g.n_leaves();
    let parents = g.parents();
    let times = g.node_times();
    let leaf_sets = g.leaf_sets();
    let counts = class_counts(g, labels);
    let first_merge: Vec<f64> = (0..n).map(|i| times[parents[i].expect("n >= 2")]).collect();
    let mut correct = 0;
    for leaf in 0..n {
        let p = parents[leaf].expect("n >= 2");
        let (l, r) = g.children(p).expect("internal");
        let sib = if l == leaf { r } else { l };
        let c = &counts[sib];
        let top = *c.iter().max().expect("non-empty");
        let tied: Vec<usize> = (0..c.len()).filter(|&k| c[k] == top).collect();
        let predicted = if tied.len() == 1 {
            tied[0]
        } else {
            let mut best: Option<(f64, usize)> = None;
            for &m in &leaf_sets[sib] {
                if !tied.contains(&labels[m]) {
                    continue;
                }
                let cand = (first_merge[m], labels[m]);
                best = match best {
                    Some(b) if b.0 > cand.0 || (b.0 == cand.0 && b.1 <= cand.1) => Some(b),
                    _ => Some(cand),
                };
            }
            best.expect("tied class present").1
        };
        if predicted == labels[leaf] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    /// Euclidean over mutually observed coordinates, rescaled to all coordinates.
    Euclidean,
    /// Fraction of mutually observed coordinates that differ.
    Hamming,
}

impl Distance {
    pub fn for_data(data: &DataMatrix) -> Distance {
        if data.is_all_real() {
            Distance::Euclidean
        } else {
            Distance::Hamming
        }
    }
}

/// Distance between two rows, or `None` when no coordinate is observed in both.
pub fn row_distance(data: &DataMatrix, a: usize, b: usize, metric: Distance) -> Option<f64> {
    let cols = data.n_cols();
    let mut shared = 0usize;
    let mut acc = 0.0;
    for c in 0..cols {
        if let (Some(x), Some(y)) = (data.get(a, c), data.get(b, c)) {
            shared += 1;
            acc += match metric {
                Distance::Euclidean => (x - y) * (x - y),
                Distance::Hamming => f64::from(u8::from(x != y)),
            };
        }
    }
    if shared == 0 {
        return None;
    }
    Some(match metric {
        Distance::Euclidean => (acc * cols as f64 / shared as f64).sqrt(),
        Distance::Hamming => acc / shared as f64,
    })
}

/// Full pairwise distance matrix. Pairs without shared coordinates get the
/// largest observed distance.
pub fn distance_matrix(data: &DataMatrix, metric: Distance) -> Vec<Vec<f64>> {
    let n = data.n_rows();
    let mut d = vec![vec![0.0; n]; n];
    let mut missing = Vec::new();
    let mut max = 0.0f64;
    for a in 0..n {
        for b in a + 1..n {
            match row_distance(data, a, b, metric) {
                Some(v) => {
                    d[a][b] = v;
                    d[b][a] = v;
                    max = max.max(v);
                }
                None => missing.push((a, b)),
            }
        }
    }
    for (a, b) in missing {
        d[a][b] = max;
        d[b][a] = max;
    }
    d
}

/// Average-linkage agglomerative clustering. Merge heights become negative
/// times, so the result can be scored like any genealogy.
pub fn average_link_tree(data: &DataMatrix, metric: Distance) -> Result<Genealogy> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 rows, got {n}")));
    }
    let base = distance_matrix(data, metric);
    let total = 2 * n - 1;
    let mut dist = vec![vec![0.0; total]; total];
    for a in 0..n {
        dist[a][..n].copy_from_slice(&base[a]);
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut events = Vec::with_capacity(n - 1);
    let mut height = 0.0;
    for i in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (k, &a) in active.iter().enumerate() {
            for &b in &active[k + 1..] {
                if dist[a][b] < best.0 {
                    best = (dist[a][b], a, b);
                }
            }
        }
        let (h, a, b) = best;
        let node = n + i;
        size[node] = size[a] + size[b];
        for &o in &active {
            if o != a && o != b {
                let v = (dist[a][o] * size[a] as f64 + dist[b][o] * size[b] as f64) / size[node] as f64;
                dist[node][o] = v;
                dist[o][node] = v;
            }
        }
        let h = h.max(height);
        events.push(Event {
            left: a,
            right: b,
            delta: h - height,
        });
        height = h;
        active.retain(|&x| x != a && x != b);
        active.push(node);
    }
    Genealogy::new(n, events)
}

/// Fills each missing cell from the nearest row observing that column; ties
/// go to the lowest row index.
pub fn nn_restore_baseline(data: &DataMatrix, metric: Distance) -> Result<DataMatrix> {
    let d = distance_matrix(data, metric);
    let mut out = data.clone();
    for (r, c) in data.missing_cells() {
        let donor = (0..data.n_rows())
            .filter(|&o| o != r && !data.is_missing(o, c))
            .min_by(|&a, &b| d[r][a].total_cmp(&d[r][b]).then(a.cmp(&b)))
            .ok_or(Error::Unrestorable { column: c })?;
        out.set(r, c, data.get(donor, c))?;
    }
    Ok(out)
}

/// Fills each missing cell with its column's most frequent observed category
/// (smallest on ties), or the column mean for real columns.
pub fn mode_restore_baseline(data: &DataMatrix) -> Result<DataMatrix> {
    let mut out = data.clone();
    for c in 0..data.n_cols() {
        let observed: Vec<f64> = (0..data.n_rows()).filter_map(|r| data.get(r, c)).collect();
        if observed.is_empty() {
            if (0..data.n_rows()).any(|r| data.is_missing(r, c)) {
                return Err(Error::Unrestorable { column: c });
            }
            continue;
        }
        let fill = match data.kind(c) {
            ColumnKind::Real => observed.iter().sum::<f64>() / observed.len() as f64,
            ColumnKind::Categorical(k) => {
                let mut counts = vec![0usize; k];
                for v in &observed {
                    counts[*v as usize] += 1;
                }
                let mut best = 0;
                for (i, &x) in counts.iter().enumerate() {
                    if x > counts[best] {
                        best = i;
                    }
                }
                best as f64
            }
        };
        for r in 0..data.n_rows() {
            if data.is_missing(r, c) {
                out.set(r, c, Some(fill))?;
            }
        }
    }
    Ok(out)
}

/// Fraction of `cells` where `filled` matches `truth` exactly.
pub fn restoration_accuracy(filled: &DataMatrix, truth: &DataMatrix, cells: &[(usize, usize)]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::UndefinedMetric("no cells to score".into()));
    }
    let hits = cells
        .iter()
        .filter(|&&(r, c)| filled.get(r, c).is_some() && filled.get(r, c) == truth.get(r, c))
        .count();
    Ok(hits as f64 / cells.len() as f64)
}

/// Tree inference used for held-out prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Greedy(GreedyVariant),
    Smc { proposal: Proposal, particles: usize },
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Greedy(v) => write!(f, "greedy-{v}"),
            Method::Smc { proposal, particles } => write!(f, "smc-{proposal}-{particles}"),
        }
    }
}

/// Log posterior probability (or density) of `truth` for the masked cell
/// `(row, col)` of `masked`. SMC methods average the cell posterior over the
/// weighted particles.
pub fn heldout_log_predictive(
    masked: &DataMatrix,
    (row, col): (usize, usize),
    truth: f64,
    params: &KernelParams,
    method: Method,
    seed: u64,
) -> Result<f64> {
    if !masked.is_missing(row, col) {
        return Err(Error::Argument(format!("cell ({row}, {col}) is not masked")));
    }
    let score = |g: &Genealogy| -> Result<f64> {
        let msgs = downward_pass(g, masked, params)?;
        Ok(cell_posterior(&msgs, params, row, col)?.log_prob(truth))
    };
    match method {
        Method::Greedy(v) => score(&greedy(masked, params, v)?.genealogy),
        Method::Smc { proposal, particles } => {
            let ens = run_smc(
                masked,
                params,
                &SmcConfig {
                    particles,
                    proposal,
                    resample_threshold: 0.5,
                    seed,
                },
            )?;
            let terms = ens
                .weighted_genealogies()?
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(g, w)| Ok(w.ln() + score(g)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(log_sum_exp(&terms))
        }
    }
}

/// Cell posterior point estimate used for restoration accuracy.
pub fn posterior_point(p: &CellPosterior) -> f64 {
    p.point()
}
