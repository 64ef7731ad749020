//! Recovery of the treatment-orthogonal part of the unmeasured spatial
//! confounder by kriging-style smoothing of the outcome residuals:
//! `Û_R = Σ̂_U (Σ̂_U + σ̂_e² I)⁻¹ r`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geo_field::{field_covariance, Coordinates, MaternParams};
use crate::linalg::{Cholesky, Matrix};
use crate::spatial_model::OutcomeFit;

/// Relative floor substituted for an exactly-zero nugget when `Σ̂_U` alone is
/// not factorizable.
pub const NUGGET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredConfounder {
    pub u_r_hat: Vec<f64>,
    /// `tr(Σ̂_U (Σ̂_U + σ̂_e² I)⁻¹)`, effective degrees of freedom of the smoother.
    pub smoother_trace: f64,
}

/// The linear smoother `r ↦ r - τ (Σ + τ I)⁻¹ r`, which equals
/// `Σ (Σ + τ I)⁻¹ r`.
#[derive(Debug, Clone)]
pub struct Smoother {
    /// Factor of `Σ + τ I`; `None` means the identity smoother (`τ = 0`).
    factor: Option<Cholesky>,
    nugget: f64,
    n: usize,
    trace: f64,
}

impl Smoother {
    /// Identity map, used when the nugget is exactly zero and `Σ` is
    /// invertible.
    pub fn identity(n: usize) -> Self {
        Smoother {
            factor: None,
            nugget: 0.0,
            n,
            trace: n as f64,
        }
    }

    /// Smoother from the factor of `Σ + τ I` and `τ`.
    pub fn from_factor(factor: Cholesky, nugget: f64) -> Self {
        let n = factor.dim();
        let trace = n as f64 - nugget * factor.inverse_trace();
        Smoother {
            factor: Some(factor),
            nugget,
            n,
            trace,
        }
    }

    /// Builds the smoother from `Σ_U` and `σ_e²`, applying the zero-nugget rule.
    pub fn new(sigma_u: &Matrix, nugget: f64) -> Result<Self> {
        let n = sigma_u.rows();
        if sigma_u.cols() != n {
            return Err(Error::Dimension("Σ_U must be square".into()));
        }
        if !(nugget >= 0.0) {
            return Err(Error::ParameterDomain(format!(
                "nugget {nugget} must be >= 0"
            )));
        }
        let scale = sigma_u.trace() / n.max(1) as f64;
        let nugget = if nugget == 0.0 {
            if Cholesky::factor_with_tolerance(sigma_u, 1e-12).is_ok() {
                return Ok(Smoother::identity(n));
            }
            NUGGET_FLOOR * scale
        } else {
            nugget
        };
        let mut v = sigma_u.clone();
        v.add_to_diagonal(nugget);
        let factor = Cholesky::factor_stabilized(&v, scale.max(nugget))?;
        Ok(Smoother::from_factor(factor, nugget))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn apply(&self, residuals: &[f64]) -> Result<Vec<f64>> {
        if residuals.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} residuals for a smoother of size {}",
                residuals.len(),
                self.n
            )));
        }
        Ok(match &self.factor {
            None => residuals.to_vec(),
            Some(f) => {
                let x = f.solve(residuals);
                residuals
                    .iter()
                    .zip(&x)
                    .map(|(r, xi)| r - self.nugget * xi)
                    .collect()
            }
        })
    }

    pub fn recover(&self, residuals: &[f64]) -> Result<RecoveredConfounder> {
        Ok(RecoveredConfounder {
            u_r_hat: self.apply(residuals)?,
            smoother_trace: self.trace,
        })
    }
}

/// Smoother for a fitted outcome model. Reuses the fit's covariance factor
/// unless the zero-nugget rule applies.
pub fn smoother_for_fit(fit: &OutcomeFit, coords: &Coordinates) -> Result<Smoother> {
    if coords.len() != fit.residuals.len() {
        return Err(Error::Dimension(format!(
            "{} coordinates for {} residuals",
            coords.len(),
            fit.residuals.len()
        )));
    }
    let p = &fit.matern;
    let factor = fit.covariance_factor();
    if p.nugget > 0.0 && factor.jitter() == 0.0 {
        return Ok(Smoother::from_factor(factor.clone(), p.nugget));
    }
    smoother_for_params(coords, p)
}

/// Smoother for explicit covariance parameters.
pub fn smoother_for_params(coords: &Coordinates, p: &MaternParams) -> Result<Smoother> {
    p.validate()?;
    Smoother::new(&field_covariance(coords, p), p.nugget)
}

/// `Û_R` for a fitted outcome model.
pub fn recover_u(fit: &OutcomeFit, coords: &Coordinates) -> Result<RecoveredConfounder> {
    smoother_for_fit(fit, coords)?.recover(&fit.residuals)
}

/// `Û_R` from an explicit `Σ_U`, nugget and residual vector.
pub fn recover_with_covariance(
    sigma_u: &Matrix,
    nugget: f64,
    residuals: &[f64],
) -> Result<RecoveredConfounder> {
    Smoother::new(sigma_u, nugget)?.recover(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_field::cov_matrix;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(n: usize) -> Coordinates {
        Coordinates::new(
            (0..n)
                .map(|i| (0.7 * i as f64, 0.3 * (i % 3) as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_nugget_is_identity() {
        let c = line(12);
        let p = MaternParams::new(1.0, 2.0, 0.5, 0.0).unwrap();
        let r: Vec<f64> = (0..12).map(|i| libm::sin(i as f64)).collect();
        let s = smoother_for_params(&c, &p).unwrap();
        assert_eq!(s.apply(&r).unwrap(), r);
        assert_eq!(s.trace(), 12.0);
    }

    #[test]
    fn zero_nugget_with_singular_field_uses_floor() {
        let c = Coordinates::new(vec![(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]).unwrap();
        let p = MaternParams::new(2.0, 1.0, 0.5, 0.0).unwrap();
        let s = smoother_for_params(&c, &p).unwrap();
        let u = s.apply(&[1.0, -1.0, 0.5]).unwrap();
        // the two coincident points receive the same smoothed value
        assert_relative_eq!(u[0], u[1], epsilon = 1e-9);
        assert!(s.trace() < 3.0);
    }

    #[test]
    fn diagonal_field_is_scalar_shrinkage() {
        let n = 8;
        let mut sigma_u = Matrix::zeros(n, n);
        sigma_u.add_to_diagonal(1.5);
        let r: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let rec = recover_with_covariance(&sigma_u, 0.5, &r).unwrap();
        for (u, ri) in rec.u_r_hat.iter().zip(&r) {
            assert_relative_eq!(*u, 1.5 / 2.0 * ri, epsilon = 1e-12);
        }
        assert_relative_eq!(rec.smoother_trace, n as f64 * 0.75, epsilon = 1e-10);
    }

    #[test]
    fn trace_matches_dense_hat_matrix() {
        let c = line(10);
        let p = MaternParams::new(1.0, 3.0, 1.5, 0.3).unwrap();
        let s = smoother_for_params(&c, &p).unwrap();
        let sigma = cov_matrix(&c, &p, false).unwrap();
        let v = cov_matrix(&c, &p, true).unwrap();
        let hat = sigma
            .matmul(&Cholesky::factor(&v).unwrap().inverse())
            .unwrap();
        assert_relative_eq!(s.trace(), hat.trace(), epsilon = 1e-9);
        // and the action agrees with the dense product
        let r: Vec<f64> = (0..10).map(|i| libm::cos(i as f64)).collect();
        let dense = hat.matvec(&r);
        for (a, b) in s.apply(&r).unwrap().iter().zip(&dense) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn smoother_is_linear(
            r1 in prop::collection::vec(-5.0f64..5.0, 15),
            r2 in prop::collection::vec(-5.0f64..5.0, 15),
            nugget in 0.01f64..2.0,
        ) {
            let c = line(15);
            let p = MaternParams::new(1.0, 2.5, 0.75, nugget).unwrap();
            let s = smoother_for_params(&c, &p).unwrap();
            let sum: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
            let lhs = s.apply(&sum).unwrap();
            let a = s.apply(&r1).unwrap();
            let b = s.apply(&r2).unwrap();
            for i in 0..15 {
                prop_assert!((lhs[i] - a[i] - b[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn smoother_shrinks(
            r in prop::collection::vec(-5.0f64..5.0, 15),
            nugget in 0.01f64..2.0,
            nu in 0.1f64..2.5,
        ) {
            let c = line(15);
            let p = MaternParams::new(1.0, 2.5, nu, nugget).unwrap();
            let u = smoother_for_params(&c, &p).unwrap().apply(&r).unwrap();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            prop_assert!(norm(&u) <= norm(&r) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn length_mismatch() {
        let s = Smoother::identity(3);
        assert!(matches!(s.apply(&[1.0; 4]), Err(Error::Dimension(_))));
    }
}
