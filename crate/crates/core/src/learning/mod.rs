//! Hyperparameter learning alternated with tree construction, and the
//! tree-based predictions built on downward messages.

mod clusters;
mod downward;
mod hyper;
pub mod jet;

pub use clusters::{flat_clusters, FlatCluster};
pub use downward::{
    argmax, cell_posterior, downward_pass, predictive_density_brownian, restore_missing, CellPosterior,
    DownMessage, Restoration, RestoredCell, TreeMessages, SAMPLES_PER_INTERVAL,
};
pub use hyper::{
    brownian_log_hyperprior, estimate_brownian_lambda, estimate_multinomial_params, multinomial_dim_gradient,
};

use rand::Rng;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::Genealogy;
use crate::greedy::{greedy, GreedyVariant};
use crate::kernels::{self, KernelParams};
use crate::smc::{run_smc, SmcConfig};
use crate::util::derive_rng;

#[derive(Clone, Debug)]
pub enum Inference {
    Greedy(GreedyVariant),
    /// SMC; the highest-weight particle's tree is used.
    Smc(SmcConfig),
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    /// Number of trees built; parameters are re-estimated between builds.
    pub iterations: usize,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub inference: Inference,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1,
            gamma_a: 1.1,
            gamma_b: 1.1,
            inference: Inference::Greedy(GreedyVariant::Rate1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitStep {
    /// 1-based tree build index.
    pub iteration: usize,
    /// Joint log-probability of the tree just built, under the parameters used to build it.
    pub joint: f64,
    /// Update objective before and after re-estimating the parameters at this
    /// tree; absent after the last build.
    pub objective_before: Option<f64>,
    pub objective_after: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub genealogy: Genealogy,
    pub params: KernelParams,
    pub joint_log_prob: f64,
    pub trace: Vec<FitStep>,
}

/// Builds a tree with the configured algorithm.
pub fn build_tree(data: &DataMatrix, params: &KernelParams, inference: &Inference) -> Result<(Genealogy, f64)> {
    match inference {
        Inference::Greedy(v) => {
            let r = greedy(data, params, *v)?;
            Ok((r.genealogy, r.joint_log_prob))
        }
        Inference::Smc(cfg) => {
            let ens = run_smc(data, params, cfg)?;
            let g = ens.best().genealogy()?;
            let j = kernels::joint_log_prob(&g, data, params)?;
            Ok((g, j))
        }
    }
}

/// Objective maximized by the parameter update: the joint log-probability,
/// plus the Gamma log-density of the inverse variances for Brownian models.
pub fn update_objective(g: &Genealogy, data: &DataMatrix, params: &KernelParams, config: &FitConfig) -> Result<f64> {
    let joint = kernels::joint_log_prob(g, data, params)?;
    Ok(match params {
        KernelParams::Brownian { lambda } => joint + brownian_log_hyperprior(lambda, config.gamma_a, config.gamma_b),
        KernelParams::Multinomial { .. } => joint,
    })
}

/// Re-estimates parameters at a fixed tree.
pub fn update_params(g: &Genealogy, data: &DataMatrix, params: &KernelParams, config: &FitConfig) -> Result<KernelParams> {
    match params {
        KernelParams::Brownian { .. } => {
            KernelParams::brownian(estimate_brownian_lambda(g, data, config.gamma_a, config.gamma_b)?)
        }
        KernelParams::Multinomial { .. } => estimate_multinomial_params(g, data, params),
    }
}

/// Alternates tree construction and parameter re-estimation.
pub fn fit(data: &DataMatrix, params0: &KernelParams, config: &FitConfig) -> Result<FitResult> {
    if config.iterations == 0 {
        return Err(Error::Config("fit needs at least one iteration".into()));
    }
    if !(config.gamma_a > 0.0 && config.gamma_b > 0.0) {
        return Err(Error::Config("gamma prior parameters must be positive".into()));
    }
    let mut params = params0.clone();
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let inference = match &config.inference {
            Inference::Smc(cfg) if it > 1 => Inference::Smc(SmcConfig {
                seed: derive_rng(cfg.seed, &[it as u64]).random(),
                ..cfg.clone()
            }),
            other => other.clone(),
        };
        let (g, joint) = build_tree(data, &params, &inference)?;
        if it == config.iterations {
            trace.push(FitStep {
                iteration: it,
                joint,
                objective_before: None,
                objective_after: None,
            });
            return Ok(FitResult {
                genealogy: g,
                params,
                joint_log_prob: joint,
                trace,
            });
        }
        let before = update_objective(&g, data, &params, config)?;
        let next = update_params(&g, data, &params, config)?;
        let after = update_objective(&g, data, &next, config)?;
        if after < before - 1e-9 * before.abs().max(1.0) {
            return Err(Error::Numeric(format!(
                "parameter update decreased its objective at iteration {it}: {before} -> {after}"
            )));
        }
        trace.push(FitStep {
            iteration: it,
            joint,
            objective_before: Some(before),
            objective_after: Some(after),
        });
        params = next;
    }
    unreachable!("loop returns on the last iteration")
}
