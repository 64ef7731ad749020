use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AttResult, Method, PropensityFit};
use crate::error::{Error, Result};
use crate::linalg::{inverse_general, Matrix};
use crate::spatial_model::SpatialDataset;

/// Control scores at or above this are rejected rather than clipped.
const MAX_CONTROL_SCORE: f64 = 1.0 - 1e-12;

/// Normalization of the IPTW contrast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum IptwForm {
    /// Treated mean minus the odds-weighted control mean
    /// `Σ w(1−A)Y / Σ w(1−A)`, `w = e/(1−e)`.
    #[default]
    Normalized,
    /// `(1/n)ΣAY − (1/n)Σ w(1−A)Y`, both sums scaled by the full sample size.
    PerUnit,
}

/// Control-unit weight in the doubly robust contrast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DrWeights {
    /// `e/(1−e)`, the ATT odds weight.
    #[default]
    Odds,
    /// The raw score `e`.
    Score,
}

fn check_scores(data: &SpatialDataset, ps: &PropensityFit) -> Result<()> {
    let n = data.n();
    if ps.scores.len() != n {
        return Err(Error::Dimension(format!(
            "{} scores for {n} units",
            ps.scores.len()
        )));
    }
    for (i, (&e, &a)) in ps.scores.iter().zip(data.treatment()).enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "score {e} at unit {i} not inside (0,1)"
            )));
        }
        if a == 0.0 && e >= MAX_CONTROL_SCORE {
            return Err(Error::ExtremeWeight(format!(
                "control unit {i} has score {e}"
            )));
        }
    }
    Ok(())
}

/// Empirical sandwich covariance of the target parameters `η` in a stack
/// with the logistic score equations `x_i(A_i − e_i)` for `λ`.
///
/// `psi` holds the per-unit target equations (n × m), `d_lambda` the summed
/// derivatives of those equations in `λ` (m × k), `d_eta` their summed
/// derivatives in `η` (m × m).
fn sandwich(
    x: &Matrix,
    a: &[f64],
    e: &[f64],
    psi: &Matrix,
    d_lambda: &Matrix,
    d_eta: &Matrix,
) -> Result<Matrix> {
    let n = psi.rows();
    let k = x.cols();
    let m = psi.cols();
    let d = k + m;
    let mut jac = Matrix::zeros(d, d);
    let mut meat = Matrix::zeros(d, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        let xi = x.row(i);
        let w = e[i] * (1.0 - e[i]);
        for p in 0..k {
            row[p] = xi[p] * (a[i] - e[i]);
            for q in 0..k {
                jac[(p, q)] -= w * xi[p] * xi[q];
            }
        }
        row[k..].copy_from_slice(psi.row(i));
        for p in 0..d {
            for q in 0..d {
                meat[(p, q)] += row[p] * row[q];
            }
        }
    }
    for r in 0..m {
        for q in 0..k {
            jac[(k + r, q)] = d_lambda[(r, q)];
        }
        for q in 0..m {
            jac[(k + r, k + q)] = d_eta[(r, q)];
        }
    }
    let jinv = inverse_general(&jac)?;
    // J⁻¹ B J⁻ᵀ restricted to the η block; sums are unscaled so the 1/n
    // factors cancel.
    let left = jinv.matmul(&meat)?;
    let full = left.matmul(&jinv.transpose())?;
    Ok(Matrix::from_fn(m, m, |r, c| full[(k + r, k + c)]))
}

/// IPTW estimate of the effect on the treated. The standard error is the
/// empirical sandwich that accounts for estimation of the propensity
/// coefficients; scores supplied without a fitted design are treated as
/// known.
pub fn att_iptw(data: &SpatialDataset, ps: &PropensityFit, form: IptwForm) -> Result<AttResult> {
    check_scores(data, ps)?;
    let n = data.n();
    let n_treated = data.n_treated();
    let n_control = n - n_treated;
    if n_treated == 0 {
        return Err(Error::EmptyGroup(
            "IPTW needs at least one treated unit".into(),
        ));
    }
    let a = data.treatment();
    let y = data.outcome();
    let e = &ps.scores;
    let x = ps.design();
    let k = x.cols();
    let odds: Vec<f64> = e.iter().map(|&s| s / (1.0 - s)).collect();

    match form {
        IptwForm::Normalized => {
            let wsum: f64 = (0..n).map(|i| odds[i] * (1.0 - a[i])).sum();
            if n_control == 0 || !(wsum > 0.0) {
                return Err(Error::EmptyGroup(
                    "normalized IPTW needs control units".into(),
                ));
            }
            let mu1 = (0..n).map(|i| a[i] * y[i]).sum::<f64>() / n_treated as f64;
            let mu0 = (0..n).map(|i| odds[i] * (1.0 - a[i]) * y[i]).sum::<f64>() / wsum;
            let tau = mu1 - mu0;

            let psi = Matrix::from_fn(n, 2, |i, j| {
                if j == 0 {
                    a[i] * (y[i] - mu1)
                } else {
                    odds[i] * (1.0 - a[i]) * (y[i] - mu0)
                }
            });
            let mut d_lambda = Matrix::zeros(2, k);
            for i in 0..n {
                let g = odds[i] * (1.0 - a[i]) * (y[i] - mu0);
                for (q, xq) in x.row(i).iter().enumerate() {
                    d_lambda[(1, q)] += g * xq;
                }
            }
            let d_eta = Matrix::from_row_major(2, 2, vec![-(n_treated as f64), 0.0, 0.0, -wsum]);
            let v = sandwich(x, a, e, &psi, &d_lambda, &d_eta)?;
            let var = v[(0, 0)] + v[(1, 1)] - 2.0 * v[(0, 1)];
            Ok(AttResult::new(
                Method::Naive,
                tau,
                libm::sqrt(var.max(0.0)),
                n_treated,
                n_control,
            ))
        }
        IptwForm::PerUnit => {
            let nf = n as f64;
            let tau = (0..n)
                .map(|i| a[i] * y[i] - odds[i] * (1.0 - a[i]) * y[i])
                .sum::<f64>()
                / nf;
            let psi = Matrix::from_fn(n, 1, |i, _| {
                a[i] * y[i] - odds[i] * (1.0 - a[i]) * y[i] - tau
            });
            let mut d_lambda = Matrix::zeros(1, k);
            for i in 0..n {
                let g = -odds[i] * (1.0 - a[i]) * y[i];
                for (q, xq) in x.row(i).iter().enumerate() {
                    d_lambda[(0, q)] += g * xq;
                }
            }
            let d_eta = Matrix::from_row_major(1, 1, vec![-nf]);
            let v = sandwich(x, a, e, &psi, &d_lambda, &d_eta)?;
            Ok(AttResult::new(
                Method::Naive,
                tau,
                libm::sqrt(v[(0, 0)].max(0.0)),
                n_treated,
                n_control,
            ))
        }
    }
}

/// Doubly robust ATT `Σ(A − (1−A)ω)(Y − μ⁰) / ΣA`, with `ω` chosen by
/// `weights`. The reported standard error is the influence-function value
/// with the nuisance models held fixed.
pub fn att_dr(
    data: &SpatialDataset,
    ps: &PropensityFit,
    mu0: &[f64],
    weights: DrWeights,
) -> Result<AttResult> {
    let n = data.n();
    if mu0.len() != n {
        return Err(Error::Dimension(format!(
            "{} control means for {n} units",
            mu0.len()
        )));
    }
    let n_treated = data.n_treated();
    if n_treated == 0 {
        return Err(Error::EmptyGroup(
            "doubly robust estimator divides by the treated count".into(),
        ));
    }
    check_scores(data, ps)?;
    let a = data.treatment();
    let y = data.outcome();
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let e = ps.scores[i];
            let omega = match weights {
                DrWeights::Odds => e / (1.0 - e),
                DrWeights::Score => e,
            };
            (a[i] - (1.0 - a[i]) * omega) * (y[i] - mu0[i])
        })
        .collect();
    let nt = n_treated as f64;
    let tau = terms.iter().sum::<f64>() / nt;
    let ss: f64 = terms
        .iter()
        .zip(a)
        .map(|(t, ai)| (t - ai * tau) * (t - ai * tau))
        .sum();
    Ok(AttResult::new(
        Method::RecoverU,
        tau,
        libm::sqrt(ss) / nt,
        n_treated,
        n - n_treated,
    ))
}
