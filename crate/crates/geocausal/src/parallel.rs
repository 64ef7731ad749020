//! Multi-threaded drivers. Work items carry pre-assigned seeds and results
//! are collected in index order, so output does not depend on the thread
//! count.

use geocausal_core::bootstrap::{aggregate, BootstrapResult, BootstrapSpec, RecoveryBootstrap};
use geocausal_core::causal::{EstimateOptions, PropensityFit};
use geocausal_core::simulation::{
    summarize, ReplicateOutcome, Scenario, ScenarioContext, ScenarioMetrics,
};
use geocausal_core::spatial_model::{OutcomeFit, SpatialDataset};
use geocausal_core::Result;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{CliError, CliResult};

pub fn thread_pool(jobs: usize) -> CliResult<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("cannot start {jobs} worker threads: {e}")))
}

/// Replicate outcomes of a scenario, in index order.
pub fn scenario_outcomes(
    pool: &ThreadPool,
    sc: &Scenario,
    opts: &EstimateOptions,
) -> Result<Vec<ReplicateOutcome>> {
    let ctx = ScenarioContext::new(sc)?;
    pool.install(|| {
        (0..sc.replicates as u64)
            .into_par_iter()
            .map(|k| ctx.run_replicate(k, opts))
            .collect()
    })
}

pub fn run_scenario(
    pool: &ThreadPool,
    sc: &Scenario,
    opts: &EstimateOptions,
) -> Result<ScenarioMetrics> {
    summarize(sc, &scenario_outcomes(pool, sc, opts)?)
}

/// Parallel counterpart of the sequential parametric bootstrap; returns
/// the same result for the same spec.
pub fn parametric_bootstrap(
    pool: &ThreadPool,
    data: &SpatialDataset,
    fit: &OutcomeFit,
    propensity: &PropensityFit,
    estimate: f64,
    spec: &BootstrapSpec,
    opts: &EstimateOptions,
) -> Result<BootstrapResult> {
    spec.validate()?;
    let boot = RecoveryBootstrap::new(data, fit, propensity, spec.mode, opts)?;
    let outcomes = pool.install(|| {
        (0..spec.replicates as u64)
            .into_par_iter()
            .map(|k| boot.replicate(spec.seed, k))
            .collect()
    });
    aggregate(estimate, outcomes)
}
