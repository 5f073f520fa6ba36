//! Independent reference computations shared by the integration tests and
//! the acceptance harness. Nothing here calls the library's likelihood code.
#![allow(dead_code)]

pub mod props;

use coalescent::kernels::{CategoricalDim, KernelParams};
use coalescent::{DataMatrix, Event, Genealogy};
use nalgebra::{DMatrix, DVector};

/// Transition matrix of the jump-to-equilibrium chain over `tau`, via the
/// matrix exponential of its generator `lambda (1 q^T - I)`.
pub fn transition(dim: &CategoricalDim, tau: f64) -> DMatrix<f64> {
    let k = dim.equilibrium.len();
    let q = DVector::from_column_slice(&dim.equilibrium);
    let gen = (DMatrix::from_element(k, 1, 1.0) * q.transpose() - DMatrix::identity(k, k)) * dim.rate;
    (gen * tau).exp()
}

/// `log p(x | tree)` for the multinomial model by summing over every
/// assignment of internal-node states. Missing leaf cells contribute 1.
pub fn multinomial_log_marginal(g: &Genealogy, data: &DataMatrix, dims: &[CategoricalDim]) -> f64 {
    let n = g.n_leaves();
    let times = g.node_times();
    let parents = g.parents();
    let internal = n - 1;
    let mut total = 0.0;
    for (d, dim) in dims.iter().enumerate() {
        let k = dim.equilibrium.len();
        let mats: Vec<Option<DMatrix<f64>>> = (0..g.node_count())
            .map(|v| parents[v].map(|p| transition(dim, times[v] - times[p])))
            .collect();
        let mut states = vec![0usize; internal];
        let mut sum = 0.0;
        loop {
            let state = |v: usize| states[v - n];
            let mut p = dim.equilibrium[state(g.root())];
            for v in n..g.node_count() - 1 {
                let par = parents[v].expect("non-root");
                p *= mats[v].as_ref().expect("edge")[(state(par), state(v))];
            }
            for leaf in 0..n {
                if let Some(x) = data.category(leaf, d) {
                    let par = parents[leaf].expect("leaf has parent");
                    p *= mats[leaf].as_ref().expect("edge")[(state(par), x)];
                }
            }
            sum += p;
            // next assignment, odometer style
            let mut i = 0;
            while i < internal {
                states[i] += 1;
                if states[i] < k {
                    break;
                }
                states[i] = 0;
                i += 1;
            }
            if i == internal {
                break;
            }
        }
        total += sum.ln();
    }
    total
}

/// Posterior of leaf `leaf`'s latent value in dimension `d` given all other
/// observed cells, by enumeration.
pub fn multinomial_leaf_posterior(
    g: &Genealogy,
    data: &DataMatrix,
    dims: &[CategoricalDim],
    leaf: usize,
    d: usize,
) -> Vec<f64> {
    let k = dims[d].equilibrium.len();
    let one = [dims[d].clone()];
    let mut col = single_column(data, d);
    let mut joint = Vec::with_capacity(k);
    for x in 0..k {
        col.set(leaf, 0, Some(x as f64)).expect("valid category");
        joint.push(multinomial_log_marginal(g, &col, &one).exp());
    }
    let z: f64 = joint.iter().sum();
    joint.iter().map(|p| p / z).collect()
}

pub fn single_column(data: &DataMatrix, d: usize) -> DataMatrix {
    let cells = (0..data.n_rows()).map(|r| vec![data.get(r, d)]).collect();
    DataMatrix::new(vec!["x".into()], vec![data.kind(d)], cells).expect("valid column")
}

/// Leaf covariance under a Brownian path from the root: `Sigma_ab = t_lca(a, b) - t_root`.
pub fn path_covariance(g: &Genealogy) -> DMatrix<f64> {
    let n = g.n_leaves();
    let times = g.node_times();
    let parents = g.parents();
    let t_root = times[g.root()];
    let ancestors = |mut v: usize| {
        let mut a = vec![v];
        while let Some(p) = parents[v] {
            a.push(p);
            v = p;
        }
        a
    };
    let anc: Vec<Vec<usize>> = (0..n).map(ancestors).collect();
    DMatrix::from_fn(n, n, |a, b| {
        let lca = anc[a].iter().find(|v| anc[b].contains(v)).copied().expect("common root");
        times[lca] - t_root
    })
}

/// Log-likelihood of the observed values of one Brownian dimension with the
/// root location integrated against Lebesgue measure.
pub fn brownian_dim_log_lik(cov: &DMatrix<f64>, values: &[Option<f64>], lambda: f64) -> f64 {
    let obs: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let m = obs.len();
    if m <= 1 {
        return 0.0;
    }
    let sub = DMatrix::from_fn(m, m, |i, j| cov[(obs[i], obs[j])]);
    let x = DVector::from_iterator(m, obs.iter().map(|&i| values[i].expect("observed")));
    let chol = sub.cholesky().expect("path covariance is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ones = DVector::from_element(m, 1.0);
    let a = chol.solve(&ones);
    let b = chol.solve(&x);
    let s11 = ones.dot(&a);
    let s1x = ones.dot(&b);
    let quad = x.dot(&b) - s1x * s1x / s11;
    -0.5 * (m - 1) as f64 * (2.0 * std::f64::consts::PI * lambda).ln() - 0.5 * logdet - 0.5 * s11.ln()
        - quad / (2.0 * lambda)
}

/// Branch length above every non-root node, summed directly from the
/// durations so short branches deep in the tree keep full precision.
pub fn branch_lengths(g: &Genealogy) -> Vec<Option<f64>> {
    let n = g.n_leaves();
    let parents = g.parents();
    let deltas: Vec<f64> = g.events().iter().map(|e| e.delta).collect();
    (0..g.node_count())
        .map(|v| {
            parents[v].map(|p| {
                let from = if v < n { 0 } else { v - n + 1 };
                deltas[from..=p - n].iter().sum()
            })
        })
        .collect()
}

/// Log-likelihood of one Brownian dimension as a Gaussian graphical model
/// over all nodes: one increment per branch, a flat root, and every internal
/// or unobserved node integrated out through a Schur complement.
pub fn brownian_dim_log_lik_graph(g: &Genealogy, values: &[Option<f64>], lambda: f64) -> f64 {
    let total = g.node_count();
    let lengths = branch_lengths(g);
    let parents = g.parents();
    let observed: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let m = observed.len();
    if m <= 1 {
        return 0.0;
    }
    let hidden: Vec<usize> = (0..total).filter(|v| !observed.contains(v)).collect();
    let mut k = DMatrix::<f64>::zeros(total, total);
    let mut log_len = 0.0;
    for v in 0..total {
        if let (Some(p), Some(l)) = (parents[v], lengths[v]) {
            let w = 1.0 / l;
            k[(v, v)] += w;
            k[(p, p)] += w;
            k[(v, p)] -= w;
            k[(p, v)] -= w;
            log_len += l.ln();
        }
    }
    let kii = DMatrix::from_fn(hidden.len(), hidden.len(), |i, j| k[(hidden[i], hidden[j])]);
    let kio = DMatrix::from_fn(hidden.len(), m, |i, j| k[(hidden[i], observed[j])]);
    let koo = DMatrix::from_fn(m, m, |i, j| k[(observed[i], observed[j])]);
    let x = DVector::from_iterator(m, observed.iter().map(|&i| values[i].expect("observed")));
    let chol = kii.cholesky().expect("hidden block is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let y = chol.solve(&(&kio * &x));
    let quad = x.dot(&(&koo * &x)) - (&kio * &x).dot(&y);
    let edges = (total - 1) as f64;
    -0.5 * (edges - hidden.len() as f64) * (2.0 * std::f64::consts::PI * lambda).ln() - 0.5 * log_len - 0.5 * logdet
        - quad / (2.0 * lambda)
}

pub fn brownian_log_lik(g: &Genealogy, data: &DataMatrix, lambda: &[f64]) -> f64 {
    (0..data.n_cols())
        .map(|d| {
            let col: Vec<Option<f64>> = (0..data.n_rows()).map(|r| data.get(r, d)).collect();
            brownian_dim_log_lik_graph(g, &col, lambda[d])
        })
        .sum()
}

/// Same quantity from the leaf covariance with the root location integrated
/// out; less accurate when short branches sit far below the root.
pub fn brownian_log_lik_covariance(g: &Genealogy, data: &DataMatrix, lambda: &[f64]) -> f64 {
    let cov = path_covariance(g);
    (0..data.n_cols())
        .map(|d| {
            let col: Vec<Option<f64>> = (0..data.n_rows()).map(|r| data.get(r, d)).collect();
            brownian_dim_log_lik(&cov, &col, lambda[d])
        })
        .sum()
}

/// Conditional mean and variance of leaf `leaf` in dimension `d` given the
/// other observed leaves, from the rank-deficient precision of the contrasts.
pub fn brownian_leaf_conditional(g: &Genealogy, data: &DataMatrix, lambda: f64, leaf: usize, d: usize) -> (f64, f64) {
    let cov = path_covariance(g);
    let obs: Vec<usize> = (0..data.n_rows()).filter(|&r| r == leaf || data.get(r, d).is_some()).collect();
    let m = obs.len();
    let sub = DMatrix::from_fn(m, m, |i, j| cov[(obs[i], obs[j])]);
    let inv = sub.try_inverse().expect("invertible");
    let ones = DVector::from_element(m, 1.0);
    let a = &inv * &ones;
    let prec = (&inv - &a * a.transpose() / ones.dot(&a)) / lambda;
    let i = obs.iter().position(|&r| r == leaf).expect("leaf included");
    let mut mean = 0.0;
    for (j, &r) in obs.iter().enumerate() {
        if j != i {
            mean -= prec[(i, j)] * data.get(r, d).expect("observed");
        }
    }
    (mean / prec[(i, i)], 1.0 / prec[(i, i)])
}

/// Every ranked merge history on `n` leaves, as `(left, right)` pairs with
/// the smaller node first.
pub fn all_histories(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(active: Vec<usize>, next: usize, acc: Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if active.len() == 1 {
            out.push(acc);
            return;
        }
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let mut rest: Vec<usize> = active.iter().copied().filter(|&x| x != active[i] && x != active[j]).collect();
                rest.push(next);
                let mut a = acc.clone();
                a.push((active[i], active[j]));
                rec(rest, next + 1, a, out);
            }
        }
    }
    let mut out = Vec::new();
    rec((0..n).collect(), n, Vec::new(), &mut out);
    out
}

pub fn genealogy_from(n: usize, pairs: &[(usize, usize)], deltas: &[f64]) -> Genealogy {
    let events = pairs
        .iter()
        .zip(deltas)
        .map(|(&(left, right), &delta)| Event { left, right, delta })
        .collect();
    Genealogy::new(n, events).expect("valid history")
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Global maximizer on `[0, hi]`: dense log-spaced grid, then golden-section
/// refinement around the best grid point.
pub fn grid_max(f: impl Fn(f64) -> f64, hi: f64, points: usize) -> f64 {
    let lo_exp = -10.0f64;
    let hi_exp = hi.log10();
    let mut grid = vec![0.0];
    grid.extend((0..points).map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (points - 1) as f64)));
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = (0..grid.len()).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let x = golden_max(&f, a, b, 1e-13 * (1.0 + b));
    if f(x) >= vals[best] {
        x
    } else {
        grid[best]
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn composite_gl(panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = 1.0 / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        for i in 0..order {
            out.push((h * (p as f64 + 0.5 * (x[i] + 1.0)), 0.5 * h * w[i]));
        }
    }
    out
}

pub fn multinomial_dims(p: &KernelParams) -> &[CategoricalDim] {
    match p {
        KernelParams::Multinomial { dims } => dims,
        _ => panic!("multinomial parameters expected"),
    }
}
