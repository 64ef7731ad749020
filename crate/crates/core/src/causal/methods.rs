use alloc::format;
use alloc::vec::Vec;

use super::{
    att_dr, att_iptw, propensity_fit, AttResult, DrWeights, IptwForm, LogisticOptions, Method,
    PropensityFit,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::recovery::{smoother_for_fit, RecoveredConfounder};
use crate::spatial_model::{
    fit_outcome_model, least_squares, IrwlsOptions, OutcomeFit, SpatialDataset,
};

/// Name given to the recovered confounder column in fitted models.
pub const RECOVERED_LABEL: &str = "U_R";

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateOptions {
    pub logistic: LogisticOptions,
    pub irwls: IrwlsOptions,
    pub iptw_form: IptwForm,
    pub dr_weights: DrWeights,
}

/// IPTW with a propensity model on the observed covariates only.
pub fn naive_att(
    data: &SpatialDataset,
    opts: &EstimateOptions,
) -> Result<(AttResult, PropensityFit)> {
    data.require_both_groups()?;
    let ps = propensity_fit(data, None, &opts.logistic)?;
    let mut att = att_iptw(data, &ps, opts.iptw_form)?;
    att.method = Method::Naive;
    Ok((att, ps))
}

/// Treatment coefficient of the spatial outcome model.
pub fn gls_att(data: &SpatialDataset, opts: &EstimateOptions) -> Result<(AttResult, OutcomeFit)> {
    data.require_both_groups()?;
    let fit = fit_outcome_model(data, &opts.irwls)?;
    let att = AttResult::new(
        Method::Gls,
        fit.beta_hat,
        fit.beta_se(),
        data.n_treated(),
        data.n_control(),
    );
    Ok((att, fit))
}

/// Doubly robust estimate with the true confounder `u` entering both the
/// propensity model and an ordinary least squares outcome model.
pub fn gold_att(
    data: &SpatialDataset,
    u: &[f64],
    opts: &EstimateOptions,
) -> Result<(AttResult, PropensityFit)> {
    let n = data.n();
    if u.len() != n {
        return Err(Error::Dimension(format!(
            "true confounder of length {} for {n} units",
            u.len()
        )));
    }
    data.require_both_groups()?;
    let ps = propensity_fit(data, Some(("U", u)), &opts.logistic)?;
    let p = data.p();
    let z = data.covariates();
    let x = Matrix::from_fn(n, p + 3, |i, j| match j {
        0 => data.treatment()[i],
        1 => 1.0,
        j if j < p + 2 => z[(i, j - 2)],
        _ => u[i],
    });
    let ols = least_squares(&x, data.outcome())?;
    let c = &ols.coefficients;
    let mu0: Vec<f64> = (0..n)
        .map(|i| c[1] + (0..p).map(|j| c[j + 2] * z[(i, j)]).sum::<f64>() + c[p + 2] * u[i])
        .collect();
    let mut att = att_dr(data, &ps, &mu0, opts.dr_weights)?;
    att.method = Method::Gold;
    Ok((att, ps))
}

/// The doubly robust step given outcome coefficients and a recovered
/// confounder: propensity on `[1, Z, Û_R]`, control mean
/// `b̂₀ + Zγ̂ + Û_R`. The standard error is left as `NaN`.
pub fn recoveru_from_parts(
    data: &SpatialDataset,
    intercept: f64,
    gamma: &[f64],
    u_r_hat: &[f64],
    opts: &EstimateOptions,
) -> Result<(AttResult, PropensityFit)> {
    let n = data.n();
    if gamma.len() != data.p() || u_r_hat.len() != n {
        return Err(Error::Dimension(format!(
            "{} outcome coefficients and {} recovered values for {} covariates, {n} units",
            gamma.len(),
            u_r_hat.len(),
            data.p()
        )));
    }
    data.require_both_groups()?;
    let ps = propensity_fit(data, Some((RECOVERED_LABEL, u_r_hat)), &opts.logistic)?;
    let z = data.covariates();
    let mu0: Vec<f64> = (0..n)
        .map(|i| {
            intercept + z.row(i).iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>() + u_r_hat[i]
        })
        .collect();
    let att = att_dr(data, &ps, &mu0, opts.dr_weights)?;
    Ok((
        AttResult::new(
            Method::RecoverU,
            att.estimate,
            f64::NAN,
            att.n_treated,
            att.n_control,
        ),
        ps,
    ))
}

/// Everything produced by one pass of the recovery pipeline.
#[derive(Debug, Clone)]
pub struct RecoverUAnalysis {
    pub att: AttResult,
    pub outcome: OutcomeFit,
    pub recovered: RecoveredConfounder,
    pub propensity: PropensityFit,
}

/// Spatial outcome fit, recovery of `Û_R` from its residuals, propensity
/// model with `Û_R`, and the doubly robust estimate.
pub fn run_recoveru(data: &SpatialDataset, opts: &EstimateOptions) -> Result<RecoverUAnalysis> {
    data.require_both_groups()?;
    let outcome = fit_outcome_model(data, &opts.irwls)?;
    let recovered = smoother_for_fit(&outcome, data.coords())?.recover(&outcome.residuals)?;
    let (att, propensity) = recoveru_from_parts(
        data,
        outcome.intercept,
        &outcome.gamma_hat,
        &recovered.u_r_hat,
        opts,
    )?;
    Ok(RecoverUAnalysis {
        att,
        outcome,
        recovered,
        propensity,
    })
}

/// Dispatches one method. `true_u` is required for [`Method::Gold`].
pub fn estimate_att(
    data: &SpatialDataset,
    method: Method,
    true_u: Option<&[f64]>,
    opts: &EstimateOptions,
) -> Result<AttResult> {
    match method {
        Method::Naive => naive_att(data, opts).map(|r| r.0),
        Method::Gls => gls_att(data, opts).map(|r| r.0),
        Method::Gold => {
            let u = true_u.ok_or_else(|| {
                Error::MissingInput("gold standard needs the true confounder".into())
            })?;
            gold_att(data, u, opts).map(|r| r.0)
        }
        Method::RecoverU => run_recoveru(data, opts).map(|r| r.att),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::expit;
    use crate::geo_field::{Coordinates, GrfSampler, MaternParams};
    use alloc::string::String;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Small confounded spatial example: U smooth, A and Y both depend on it.
    fn confounded(seed: u64, n: usize) -> (SpatialDataset, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random::<f64>() * 20.0, rng.random::<f64>() * 20.0))
            .collect();
        let coords = Coordinates::new(pts).unwrap();
        let p = MaternParams::new(1.0, 5.0, 1.5, 0.0).unwrap();
        let u = GrfSampler::new(&coords, &p).unwrap().sample(&mut rng);
        let z = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let e = expit(-0.5 + 0.3 * z[(i, 0)] - 0.4 * z[(i, 1)] + 1.5 * u[i]);
                f64::from(u8::from(rng.random::<f64>() < e))
            })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                a[i] + 0.5 * z[(i, 0)] + 1.2 * z[(i, 1)] + u[i] + libm::sqrt(0.1) * eps
            })
            .collect();
        let names = vec![String::from("z1"), String::from("z2")];
        (SpatialDataset::new(coords, y, a, z, names).unwrap(), u)
    }

    #[test]
    fn gold_requires_true_u() {
        let (d, _) = confounded(1, 80);
        assert!(matches!(
            estimate_att(&d, Method::Gold, None, &EstimateOptions::default()),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn zero_recovery_reduces_to_covariate_dr() {
        let (d, _) = confounded(2, 120);
        let opts = EstimateOptions::default();
        let (att, ps) = recoveru_from_parts(&d, 0.3, &[0.5, 1.2], &[0.0; 120], &opts).unwrap();
        assert_eq!(ps.alpha_hat, Some(0.0));
        let base = propensity_fit(&d, None, &opts.logistic).unwrap();
        assert_eq!(ps.scores, base.scores);
        let mu0: Vec<f64> = (0..120)
            .map(|i| 0.3 + 0.5 * d.covariates()[(i, 0)] + 1.2 * d.covariates()[(i, 1)])
            .collect();
        let dr = att_dr(&d, &base, &mu0, opts.dr_weights).unwrap();
        assert_eq!(att.estimate, dr.estimate);
    }

    #[test]
    fn all_methods_run() {
        let (d, u) = confounded(3, 150);
        let opts = EstimateOptions::default();
        for m in Method::ALL {
            let r = estimate_att(&d, m, Some(&u), &opts).unwrap();
            assert_eq!(r.method, m);
            assert!(r.estimate.is_finite());
        }
        let full = run_recoveru(&d, &opts).unwrap();
        assert_eq!(full.recovered.u_r_hat.len(), 150);
        assert!(full.propensity.alpha_hat.unwrap() > 0.0);
    }

    #[test]
    fn gold_near_truth_on_average() {
        let opts = EstimateOptions::default();
        let mean = (0..20)
            .map(|s| {
                let (d, u) = confounded(100 + s, 200);
                gold_att(&d, &u, &opts).unwrap().0.estimate
            })
            .sum::<f64>()
            / 20.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }
}
