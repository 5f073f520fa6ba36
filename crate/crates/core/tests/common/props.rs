//! Property checks runnable both as `#[test]`s and from the acceptance
//! harness. Each returns the first counterexample as an error string.

use std::path::Path;

use coalescent::evaluation::{dendrogram_purity, loo_accuracy, subtree_score};
use coalescent::genealogy;
use coalescent::kernels::{self, CategoricalDim, KernelParams, MessageBody, SubtreeMessage};
use coalescent::learning::{downward_pass, DownMessage};
use coalescent::smc::{ess, systematic_resample};
use coalescent::util::derive_rng;
use coalescent::{DataMatrix, Genealogy};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{brownian_leaf_conditional, multinomial_leaf_posterior};

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub struct Instance {
    pub g: Genealogy,
    pub data: DataMatrix,
    pub params: KernelParams,
}

/// Random multinomial tree, parameters and data; cells go missing with
/// probability `missing`.
pub fn multinomial_instance(seed: u64, n: usize, dims: usize, k: usize, missing: f64) -> Instance {
    let mut rng = derive_rng(seed, &[7]);
    let g = genealogy::sample(n, &mut rng).expect("n >= 2");
    let params = KernelParams::multinomial(
        (0..dims)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                CategoricalDim {
                    rate: rng.random_range(0.2..3.0),
                    equilibrium: raw.iter().map(|x| x / s).collect(),
                }
            })
            .collect(),
    )
    .expect("valid params");
    let cells = (0..n)
        .map(|_| {
            (0..dims)
                .map(|_| (rng.random::<f64>() >= missing).then(|| rng.random_range(0..k) as f64))
                .collect()
        })
        .collect();
    let names = (0..dims).map(|d| format!("x{d}")).collect();
    let data = DataMatrix::new(names, vec![coalescent::ColumnKind::Categorical(k); dims], cells).expect("valid data");
    Instance { g, data, params }
}

pub fn brownian_instance(seed: u64, n: usize, dims: usize, missing: f64) -> Instance {
    let mut rng = derive_rng(seed, &[8]);
    let g = genealogy::sample(n, &mut rng).expect("n >= 2");
    let params = KernelParams::brownian((0..dims).map(|_| rng.random_range(0.3..3.0)).collect()).expect("valid");
    let normal = Normal::new(0.0, 1.5).expect("valid");
    let cells = (0..n)
        .map(|_| {
            (0..dims)
                .map(|_| {
                    let v = normal.sample(&mut rng);
                    (rng.random::<f64>() >= missing).then_some(v)
                })
                .collect()
        })
        .collect();
    let names = (0..dims).map(|d| format!("x{d}")).collect();
    let data = DataMatrix::new(names, vec![coalescent::ColumnKind::Real; dims], cells).expect("valid data");
    Instance { g, data, params }
}

/// Up messages satisfy `q . M = 1` on observed dimensions and down messages
/// are probability vectors.
pub fn message_normalization(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..8, 1usize..4, 2usize..5), |(seed, n, dims, k)| {
        let inst = multinomial_instance(seed, n, dims, k, 0.2);
        let dimp = super::multinomial_dims(&inst.params);
        let msgs = downward_pass(&inst.g, &inst.data, &inst.params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for m in &msgs.up {
            let MessageBody::Categorical { vectors, observed } = &m.body else {
                return Err(TestCaseError::fail("categorical message expected"));
            };
            for d in 0..dims {
                let s: f64 = vectors[d].iter().zip(&dimp[d].equilibrium).map(|(a, b)| a * b).sum();
                if observed[d] {
                    prop_assert!(close(s, 1.0, 1e-12), "q.M = {s}");
                }
                prop_assert!(vectors[d].iter().all(|&v| v >= 0.0));
            }
        }
        for m in &msgs.down {
            let DownMessage::Categorical { probs } = m else {
                return Err(TestCaseError::fail("categorical message expected"));
            };
            for p in probs {
                prop_assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
                prop_assert!(p.iter().all(|&v| v >= 0.0));
            }
        }
        Ok(())
    })
}

/// Down messages at the leaves equal the enumerated posterior of each leaf's
/// latent value given all other observations.
pub fn up_down_consistency_multinomial(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..6, 2usize..4), |(seed, n, k)| {
        let inst = multinomial_instance(seed, n, 2, k, 0.2);
        let dimp = super::multinomial_dims(&inst.params);
        let msgs = downward_pass(&inst.g, &inst.data, &inst.params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for leaf in 0..n {
            let DownMessage::Categorical { probs } = &msgs.down[leaf] else {
                return Err(TestCaseError::fail("categorical message expected"));
            };
            for d in 0..2 {
                let oracle = multinomial_leaf_posterior(&inst.g, &inst.data, dimp, leaf, d);
                for (a, b) in probs[d].iter().zip(&oracle) {
                    prop_assert!((a - b).abs() < 1e-9, "leaf {leaf} dim {d}: {:?} vs {:?}", probs[d], oracle);
                }
            }
        }
        Ok(())
    })
}

/// Gaussian down messages at the leaves equal the conditional of each leaf
/// given the other leaves' values.
pub fn up_down_consistency_brownian(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..7), |(seed, n)| {
        let inst = brownian_instance(seed, n, 2, 0.0);
        let KernelParams::Brownian { lambda } = &inst.params else { unreachable!() };
        let msgs = downward_pass(&inst.g, &inst.data, &inst.params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for leaf in 0..n {
            let DownMessage::Gaussian { mean, var_scale } = &msgs.down[leaf] else {
                return Err(TestCaseError::fail("gaussian message expected"));
            };
            for d in 0..2 {
                let (m, v) = brownian_leaf_conditional(&inst.g, &inst.data, lambda[d], leaf, d);
                prop_assert!(close(mean[d], m, 1e-8), "mean {} vs {m}", mean[d]);
                prop_assert!(close(lambda[d] * var_scale[d], v, 1e-8), "var {} vs {v}", lambda[d] * var_scale[d]);
            }
        }
        Ok(())
    })
}

fn bodies_close(a: &SubtreeMessage, b: &SubtreeMessage) -> bool {
    if !close(a.time, b.time, 1e-15) || !close(a.log_norm, b.log_norm, 1e-12) {
        return false;
    }
    match (&a.body, &b.body) {
        (
            MessageBody::Gaussian { mean: m1, var_scale: v1 },
            MessageBody::Gaussian { mean: m2, var_scale: v2 },
        ) => {
            m1.iter().zip(m2).all(|(x, y)| close(*x, *y, 1e-12))
                && v1.iter().zip(v2).all(|(x, y)| x == y || close(*x, *y, 1e-12))
        }
        (
            MessageBody::Categorical { vectors: a1, observed: o1 },
            MessageBody::Categorical { vectors: a2, observed: o2 },
        ) => o1 == o2 && a1.iter().flatten().zip(a2.iter().flatten()).all(|(x, y)| close(*x, *y, 1e-12)),
        _ => false,
    }
}

/// Merging `(l, r)` and `(r, l)` gives the same normalizer and message.
pub fn merge_symmetry(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), any::<bool>(), 0.01f64..3.0), |(seed, brownian, delta)| {
        let inst = if brownian {
            brownian_instance(seed, 4, 3, 0.2)
        } else {
            multinomial_instance(seed, 4, 3, 3, 0.2)
        };
        let leaf = |r: usize| kernels::leaf_message(&inst.data.row(r), &inst.params).expect("valid row");
        let inner = kernels::merge(&leaf(0), &leaf(1), -0.3, &inst.params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let pairs = [(leaf(2), leaf(3), -delta), (inner.message.clone(), leaf(2), -0.3 - delta)];
        for (l, r, t) in pairs {
            let a = kernels::merge(&l, &r, t, &inst.params);
            let b = kernels::merge(&r, &l, t, &inst.params);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!(close(a.log_z, b.log_z, 1e-12), "{} vs {}", a.log_z, b.log_z);
                    prop_assert!(bodies_close(&a.message, &b.message));
                }
                (Err(_), Err(_)) => {}
                _ => return Err(TestCaseError::fail("merge succeeded in one order only")),
            }
        }
        Ok(())
    })
}

/// `1 <= ESS <= S` whenever some weight is finite.
pub fn ess_bounds(cases: u32) -> Result<(), String> {
    let weights = prop::collection::vec(prop_oneof![9 => -60.0f64..60.0, 1 => Just(f64::NEG_INFINITY)], 1..300);
    run(cases, weights, |lw| {
        let e = ess(&lw);
        if lw.iter().all(|w| *w == f64::NEG_INFINITY) {
            prop_assert_eq!(e, 0.0);
        } else {
            prop_assert!(e >= 1.0 - 1e-9 && e <= lw.len() as f64 + 1e-9, "ess {e} for S={}", lw.len());
        }
        Ok(())
    })
}

/// Systematic resampling gives every particle `floor(S w)` or `ceil(S w)`
/// offspring, and the average count over offsets is `S w`.
pub fn resampling_unbiasedness(cases: u32) -> Result<(), String> {
    run(cases, (prop::collection::vec(-5.0f64..5.0, 1..60), any::<u64>()), |(lw, seed)| {
        let s = lw.len();
        let total = coalescent::util::log_sum_exp(&lw);
        let expected: Vec<f64> = lw.iter().map(|w| (w - total).exp() * s as f64).collect();
        let reps = 400;
        let mut mean = vec![0.0; s];
        for r in 0..reps {
            let idx = systematic_resample(&lw, &mut derive_rng(seed, &[r]));
            prop_assert_eq!(idx.len(), s);
            let mut counts = vec![0usize; s];
            for i in idx {
                counts[i] += 1;
            }
            for i in 0..s {
                let c = counts[i] as f64;
                prop_assert!(
                    c >= (expected[i] - 1e-9).floor() && c <= (expected[i] + 1e-9).ceil(),
                    "count {c} for expectation {}",
                    expected[i]
                );
                mean[i] += c / reps as f64;
            }
        }
        for i in 0..s {
            prop_assert!((mean[i] - expected[i]).abs() < 0.15, "mean {} vs {}", mean[i], expected[i]);
        }
        Ok(())
    })
}

fn metrics(g: &Genealogy, labels: &[usize]) -> [Option<f64>; 3] {
    [
        dendrogram_purity(g, labels).ok(),
        subtree_score(g, labels).ok(),
        loo_accuracy(g, labels).ok(),
    ]
}

/// Scores lie in `[0, 1]` and do not depend on leaf order; purity and the
/// subtree score also ignore class names.
pub fn metric_ranges_and_invariance(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..40, 1usize..6), |(seed, n, k)| {
        let mut rng = derive_rng(seed, &[9]);
        let g = genealogy::sample(n, &mut rng).expect("n >= 2");
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let base = metrics(&g, &labels);
        for v in base.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(v), "score {v}");
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let g2 = g.relabel_leaves(&perm).expect("valid permutation");
        let mut labels2 = vec![0; n];
        for i in 0..n {
            labels2[perm[i]] = labels[i];
        }
        let moved = metrics(&g2, &labels2);
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!(a.is_some() == b.is_some() && a.zip(*b).is_none_or(|(x, y)| close(x, y, 1e-12)));
        }
        let renamed: Vec<usize> = labels.iter().map(|&c| k - 1 - c).collect();
        let r = metrics(&g, &renamed);
        for i in 0..2 {
            prop_assert!(base[i].is_some() == r[i].is_some() && base[i].zip(r[i]).is_none_or(|(x, y)| close(x, y, 1e-12)));
        }
        Ok(())
    })
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("readable"))
        })
        .collect();
    files.sort();
    files
}

/// The same command and seed produce byte-identical output files.
pub fn cli_determinism(cases: u32) -> Result<(), String> {
    let cmds: [&[&str]; 4] = [
        &["--algo", "rate1", "fit"],
        &["--algo", "smc", "--particles", "8", "--proposal", "post-post", "--iters", "2", "fit"],
        &["--particles", "16", "--proposal", "prior-post", "smc"],
        &["--algo", "max-prob", "restore"],
    ];
    run(cases, (any::<u64>(), 0usize..4, any::<bool>()), |(seed, c, brownian)| {
        let tmp = tempfile::tempdir().map_err(|e| TestCaseError::fail(e.to_string()))?;
        let inst = if brownian {
            brownian_instance(seed, 7, 2, 0.15)
        } else {
            multinomial_instance(seed, 7, 3, 3, 0.15)
        };
        let path = tmp.path().join("data.csv");
        coalescent::data::save_csv(&inst.data, &path, "NA").map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut outs = Vec::new();
        for run_id in 0..2 {
            let out = tmp.path().join(format!("out{run_id}"));
            let mut args: Vec<String> = vec!["coalescent".into(), "--seed".into(), (seed % 1000).to_string()];
            args.extend(cmds[c].iter().map(|s| s.to_string()));
            args.extend(["--out-dir".to_string(), out.display().to_string(), path.display().to_string()]);
            args.extend(["--model".to_string(), if brownian { "brownian" } else { "multinomial" }.to_string()]);
            if !brownian {
                args.extend(["--schema".to_string(), "cat:3".to_string()]);
            }
            let code = coalescent::cli::main_from(&args);
            prop_assert_eq!(code, 0, "{:?}", args);
            outs.push(read_dir_sorted(&out));
        }
        prop_assert!(!outs[0].is_empty());
        prop_assert_eq!(&outs[0], &outs[1]);
        Ok(())
    })
}
