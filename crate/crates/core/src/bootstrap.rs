//! Parametric bootstrap for the recovery estimator: replicate data sets are
//! drawn from the fitted spatial, propensity and outcome models, and the
//! estimator is rerun on each.
//!
//! Every replicate owns an independent random stream derived from the
//! master seed and its index, so replicates may be evaluated in any order
//! or on any number of workers. Aggregation sorts the replicate estimates
//! first, which makes the result independent of evaluation order.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::causal::{recoveru_from_parts, run_recoveru, EstimateOptions, PropensityFit, Z_95};
use crate::error::{Error, Result};
use crate::geo_field::{field_covariance, GrfSampler};
use crate::recovery::{smoother_for_fit, Smoother};
use crate::spatial_model::{GlsSolver, OutcomeFit, SpatialDataset};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// How much of the pipeline is re-estimated inside each replicate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BootstrapMode {
    /// Refit the covariance parameters, recover, and re-estimate.
    #[default]
    FullRefit,
    /// Keep the fitted covariance parameters; refit only the regression
    /// coefficients and the propensity model.
    FrozenCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    /// Worker count used by parallel drivers; ignored by the sequential one.
    pub parallelism: usize,
    pub mode: BootstrapMode,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            replicates: 500,
            seed: 0,
            parallelism: 1,
            mode: BootstrapMode::FullRefit,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::ParameterDomain(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::ParameterDomain(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub estimate: f64,
    /// Sample standard deviation of the successful replicate estimates.
    pub std_error: f64,
    pub ci: (f64, f64),
    /// Successful replicate estimates in ascending order.
    pub replicates: Vec<f64>,
    pub failed: usize,
}

/// Deterministic generator for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Combines replicate outcomes with the point estimate.
pub fn aggregate(estimate: f64, outcomes: Vec<Result<f64>>) -> Result<BootstrapResult> {
    let total = outcomes.len();
    let mut values: Vec<f64> = outcomes
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|v| v.is_finite())
        .collect();
    let failed = total - values.len();
    if values.len() < 2 || failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::BootstrapInstability { failed, total });
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    let std_error = libm::sqrt(var);
    Ok(BootstrapResult {
        estimate,
        std_error,
        ci: (estimate - Z_95 * std_error, estimate + Z_95 * std_error),
        replicates: values,
        failed,
    })
}

/// Fitted generative model for replicate data sets.
#[derive(Debug, Clone)]
pub struct ReplicateModel {
    data: SpatialDataset,
    field: GrfSampler,
    beta: f64,
    intercept: f64,
    gamma: Vec<f64>,
    noise_sd: f64,
    propensity: PropensityFit,
}

impl ReplicateModel {
    /// `propensity` must have been fitted on the covariates of `data`, with
    /// its confounder coefficient (if any) applied to the simulated field.
    pub fn new(
        data: &SpatialDataset,
        fit: &OutcomeFit,
        propensity: &PropensityFit,
    ) -> Result<Self> {
        if fit.gamma_hat.len() != data.p() || propensity.lambda_hat.len() != data.p() + 1 {
            return Err(Error::Dimension(
                "fits do not match the dataset covariates".into(),
            ));
        }
        let cov = field_covariance(data.coords(), &fit.matern);
        let field = GrfSampler::from_covariance(&cov, fit.matern.sigma2.max(f64::MIN_POSITIVE))?;
        Ok(ReplicateModel {
            data: data.clone(),
            field,
            beta: fit.beta_hat,
            intercept: fit.intercept,
            gamma: fit.gamma_hat.clone(),
            noise_sd: libm::sqrt(fit.matern.nugget),
            propensity: propensity.clone(),
        })
    }

    pub fn data(&self) -> &SpatialDataset {
        &self.data
    }

    /// Draws `U_sim`, then `A_sim` from the propensity model, then `Y_sim`
    /// from the outcome model.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SpatialDataset> {
        let u = self.field.sample(rng);
        let z = self.data.covariates();
        let scores = self.propensity.predict(z, Some(&u));
        let n = self.data.n();
        let mut a = Vec::with_capacity(n);
        for &e in &scores {
            a.push(f64::from(u8::from(rng.random::<f64>() < e)));
        }
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let eps: f64 = StandardNormal.sample(rng);
            let zg: f64 = z.row(i).iter().zip(&self.gamma).map(|(a, b)| a * b).sum();
            y.push(a[i] * self.beta + self.intercept + zg + u[i] + self.noise_sd * eps);
        }
        self.data.with_response(a, y)
    }
}

/// The recovery estimator evaluated on replicate data sets.
#[derive(Debug, Clone)]
pub struct RecoveryBootstrap {
    model: ReplicateModel,
    mode: BootstrapMode,
    frozen: Option<(GlsSolver, Smoother)>,
    opts: EstimateOptions,
}

impl RecoveryBootstrap {
    pub fn new(
        data: &SpatialDataset,
        fit: &OutcomeFit,
        propensity: &PropensityFit,
        mode: BootstrapMode,
        opts: &EstimateOptions,
    ) -> Result<Self> {
        let model = ReplicateModel::new(data, fit, propensity)?;
        let frozen = match mode {
            BootstrapMode::FullRefit => None,
            BootstrapMode::FrozenCovariance => Some((
                GlsSolver::new(fit.covariance_factor().clone(), data.covariates())?,
                smoother_for_fit(fit, data.coords())?,
            )),
        };
        Ok(RecoveryBootstrap {
            model,
            mode,
            frozen,
            opts: *opts,
        })
    }

    pub fn mode(&self) -> BootstrapMode {
        self.mode
    }

    /// Estimate on replicate `index` of the stream seeded by `seed`.
    pub fn replicate(&self, seed: u64, index: u64) -> Result<f64> {
        let mut rng = replicate_rng(seed, index);
        let sim = self.model.draw(&mut rng)?;
        self.estimate(&sim)
    }

    fn estimate(&self, sim: &SpatialDataset) -> Result<f64> {
        sim.require_both_groups()?;
        match &self.frozen {
            None => Ok(run_recoveru(sim, &self.opts)?.att.estimate),
            Some((solver, smoother)) => {
                let gls = solver.fit(sim.treatment(), sim.outcome())?;
                let c = &gls.coefficients;
                let residuals = crate::spatial_model::outcome_residuals(sim, c[0], c[1], &c[2..]);
                let u_r = smoother.apply(&residuals)?;
                Ok(recoveru_from_parts(sim, c[1], &c[2..], &u_r, &self.opts)?
                    .0
                    .estimate)
            }
        }
    }
}

/// Sequential parametric bootstrap of the recovery estimator.
pub fn parametric_bootstrap(
    data: &SpatialDataset,
    fit: &OutcomeFit,
    propensity: &PropensityFit,
    estimate: f64,
    spec: &BootstrapSpec,
    opts: &EstimateOptions,
) -> Result<BootstrapResult> {
    spec.validate()?;
    let boot = RecoveryBootstrap::new(data, fit, propensity, spec.mode, opts)?;
    let outcomes = (0..spec.replicates as u64)
        .map(|k| boot.replicate(spec.seed, k))
        .collect();
    aggregate(estimate, outcomes)
}

/// Parametric bootstrap of an arbitrary estimator on replicate data sets.
pub fn parametric_bootstrap_with<F>(
    model: &ReplicateModel,
    estimate: f64,
    spec: &BootstrapSpec,
    mut estimator: F,
) -> Result<BootstrapResult>
where
    F: FnMut(&SpatialDataset) -> Result<f64>,
{
    spec.validate()?;
    let outcomes = (0..spec.replicates as u64)
        .map(|k| {
            let mut rng = replicate_rng(spec.seed, k);
            estimator(&model.draw(&mut rng)?)
        })
        .collect();
    aggregate(estimate, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{expit, propensity_fit, run_recoveru, LogisticOptions};
    use crate::geo_field::{Coordinates, MaternParams};
    use crate::linalg::Matrix;
    use crate::spatial_model::fit_with_params;
    use alloc::string::String;
    use alloc::vec;

    fn toy(seed: u64, n: usize) -> SpatialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| (20.0 * rng.random::<f64>(), 20.0 * rng.random::<f64>()))
            .collect();
        let coords = Coordinates::new(pts).unwrap();
        let u = GrfSampler::new(&coords, &MaternParams::new(1.0, 5.0, 1.5, 0.0).unwrap())
            .unwrap()
            .sample(&mut rng);
        let z = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let a: Vec<f64> = (0..n)
            .map(|i| {
                f64::from(u8::from(
                    rng.random::<f64>() < expit(-0.3 + 0.5 * z[(i, 0)] + u[i]),
                ))
            })
            .collect();
        let y = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a[i] + z[(i, 0)] - 0.5 * z[(i, 1)] + u[i] + 0.3 * e
            })
            .collect();
        SpatialDataset::new(
            coords,
            y,
            a,
            z,
            vec![String::from("z1"), String::from("z2")],
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let spec = BootstrapSpec {
            replicates: 1,
            ..BootstrapSpec::default()
        };
        assert!(spec.validate().is_err());
        assert_eq!(BootstrapSpec::default().replicates, 500);
    }

    #[test]
    fn aggregate_statistics() {
        let r = aggregate(
            1.0,
            vec![
                Ok(1.0),
                Ok(3.0),
                Ok(2.0),
                Err(Error::Fit("x".into())),
                Ok(4.0),
                Ok(5.0),
            ],
        )
        .unwrap();
        assert_eq!(r.failed, 1);
        assert_eq!(r.replicates, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((r.std_error - libm::sqrt(2.5)).abs() < 1e-15);
        assert_eq!(r.ci.0, 1.0 - Z_95 * r.std_error);
    }

    #[test]
    fn too_many_failures() {
        let outcomes = (0..10)
            .map(|i| {
                if i < 3 {
                    Err(Error::Fit("x".into()))
                } else {
                    Ok(i as f64)
                }
            })
            .collect();
        assert_eq!(
            aggregate(0.0, outcomes),
            Err(Error::BootstrapInstability {
                failed: 3,
                total: 10
            })
        );
    }

    #[test]
    fn permutation_invariant() {
        let vals: Vec<f64> = (0..50)
            .map(|i| libm::sin(i as f64 * 1.7) * 1e3 + 1e-7 * i as f64)
            .collect();
        let a = aggregate(0.5, vals.iter().copied().map(Ok).collect()).unwrap();
        let b = aggregate(0.5, vals.iter().rev().copied().map(Ok).collect()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_estimator_has_zero_se() {
        let d = toy(1, 60);
        let fit = fit_with_params(&d, &MaternParams::new(1.0, 4.0, 1.0, 0.1).unwrap()).unwrap();
        let ps = propensity_fit(&d, None, &LogisticOptions::default()).unwrap();
        let model = ReplicateModel::new(&d, &fit, &ps).unwrap();
        let spec = BootstrapSpec {
            replicates: 20,
            ..BootstrapSpec::default()
        };
        let r = parametric_bootstrap_with(&model, 0.0, &spec, |_| Ok(0.25)).unwrap();
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn same_seed_same_result() {
        let d = toy(2, 80);
        let opts = EstimateOptions::default();
        let full = run_recoveru(&d, &opts).unwrap();
        let spec = BootstrapSpec {
            replicates: 10,
            seed: 42,
            parallelism: 1,
            mode: BootstrapMode::FrozenCovariance,
        };
        let run = || {
            parametric_bootstrap(
                &d,
                &full.outcome,
                &full.propensity,
                full.att.estimate,
                &spec,
                &opts,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.std_error > 0.0);
        // replicate order does not matter
        let boot =
            RecoveryBootstrap::new(&d, &full.outcome, &full.propensity, spec.mode, &opts).unwrap();
        let rev = (0..10u64).rev().map(|k| boot.replicate(42, k)).collect();
        assert_eq!(aggregate(full.att.estimate, rev).unwrap(), a);
    }

    #[test]
    fn replicate_streams_differ() {
        let mut a = replicate_rng(7, 0);
        let mut b = replicate_rng(7, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn larger_nugget_does_not_shrink_se() {
        let d = toy(3, 80);
        let opts = EstimateOptions::default();
        let ps = propensity_fit(&d, None, &opts.logistic).unwrap();
        let base = MaternParams::new(0.5, 4.0, 1.0, 0.2).unwrap();
        let doubled = MaternParams {
            nugget: 0.4,
            ..base
        };
        let mut not_smaller = 0;
        for s in 0..20 {
            let spec = BootstrapSpec {
                replicates: 40,
                seed: 1000 + s,
                parallelism: 1,
                mode: BootstrapMode::FrozenCovariance,
            };
            let se = |p: &MaternParams| {
                let fit = fit_with_params(&d, p).unwrap();
                let ps_u = ps.clone();
                parametric_bootstrap(&d, &fit, &ps_u, 0.0, &spec, &opts)
                    .unwrap()
                    .std_error
            };
            not_smaller += usize::from(se(&doubled) >= se(&base));
        }
        assert!(not_smaller >= 14, "{not_smaller}/20");
    }
}
