use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::spatial_model::SpatialDataset;

/// Numerically stable logistic function.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Converged once no fitted score moves by more than this.
    pub tol: f64,
    /// Coefficient norm treated as divergence (complete separation).
    pub separation_norm: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-10,
            separation_norm: 30.0,
        }
    }
}

/// Fitted propensity model.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Intercept first, then one coefficient per covariate.
    pub lambda_hat: Vec<f64>,
    /// Coefficient on the confounder column, when one was included.
    pub alpha_hat: Option<f64>,
    pub scores: Vec<f64>,
    pub labels: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    design: Matrix,
}

impl PropensityFit {
    /// Wraps externally supplied scores (no fitted design). Estimators treat
    /// such scores as known when computing standard errors.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::ParameterDomain(format!(
                "score {} at unit {i} not inside (0,1)",
                scores[i]
            )));
        }
        let n = scores.len();
        Ok(PropensityFit {
            lambda_hat: Vec::new(),
            alpha_hat: None,
            scores,
            labels: Vec::new(),
            converged: true,
            iterations: 0,
            design: Matrix::zeros(n, 0),
        })
    }

    /// Design the model was fitted on (confounder column last, if any).
    pub fn design(&self) -> &Matrix {
        &self.design
    }

    /// All coefficients in design order.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = self.lambda_hat.clone();
        if let Some(a) = self.alpha_hat {
            if self.design.cols() > c.len() {
                c.push(a);
            }
        }
        c
    }

    /// Scores for covariates `z` (rows) and confounder values `u`:
    /// `expit(λ₀ + zλ + α u)`.
    pub fn predict(&self, z: &Matrix, u: Option<&[f64]>) -> Vec<f64> {
        (0..z.rows())
            .map(|i| {
                let mut eta = self.lambda_hat[0] + dot(&self.lambda_hat[1..], z.row(i));
                if let (Some(a), Some(u)) = (self.alpha_hat, u) {
                    eta += a * u[i];
                }
                expit(eta)
            })
            .collect()
    }
}

fn log_likelihood(x: &Matrix, a: &[f64], coef: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| {
            let eta = dot(x.row(i), coef);
            // a·η - log(1 + e^η), stable
            let softplus = if eta > 0.0 {
                eta + libm::log1p(libm::exp(-eta))
            } else {
                libm::log1p(libm::exp(eta))
            };
            a[i] * eta - softplus
        })
        .sum()
}

/// Newton–Raphson maximum likelihood for `P(A = 1 | x) = expit(xᵀλ)`.
/// `x` must contain the intercept column if one is wanted.
pub fn logistic_fit(x: &Matrix, a: &[f64], opts: &LogisticOptions) -> Result<PropensityFit> {
    let n = x.rows();
    let k = x.cols();
    if a.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} design rows",
            a.len()
        )));
    }
    let treated = a.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::EmptyGroup("logistic fit needs both classes".into()));
    }
    let mut coef = vec![0.0; k];
    let mut scores = vec![0.5; n];
    let mut ll = log_likelihood(x, a, &coef);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let mut info = Matrix::zeros(k, k);
        let mut grad = vec![0.0; k];
        for i in 0..n {
            let row = x.row(i);
            let w = scores[i] * (1.0 - scores[i]);
            let r = a[i] - scores[i];
            for p in 0..k {
                grad[p] += row[p] * r;
                let wp = w * row[p];
                for q in p..k {
                    info[(p, q)] += wp * row[q];
                }
            }
        }
        for p in 0..k {
            for q in 0..p {
                info[(p, q)] = info[(q, p)];
            }
        }
        let chol = Cholesky::factor_with_tolerance(&info, 1e-14).map_err(|_| {
            Error::Separation(format!("information matrix singular at iteration {it}"))
        })?;
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut next: Vec<f64>;
        let mut next_ll;
        let mut halvings = 0;
        loop {
            next = coef.iter().zip(&step).map(|(c, s)| c + t * s).collect();
            next_ll = log_likelihood(x, a, &next);
            if next_ll >= ll - 1e-12 * ll.abs() || halvings >= 30 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let norm = libm::sqrt(next.iter().map(|c| c * c).sum::<f64>());
        if !(norm <= opts.separation_norm) {
            return Err(Error::Separation(format!(
                "coefficient norm {norm:.3} exceeds {} at iteration {it}",
                opts.separation_norm
            )));
        }
        let new_scores: Vec<f64> = (0..n).map(|i| expit(dot(x.row(i), &next))).collect();
        let change = new_scores
            .iter()
            .zip(&scores)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        coef = next;
        scores = new_scores;
        ll = next_ll;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    if let Some(i) = scores.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Separation(format!(
            "score for unit {i} is {} (not inside (0,1))",
            scores[i]
        )));
    }
    Ok(PropensityFit {
        lambda_hat: coef,
        alpha_hat: None,
        scores,
        labels: (0..k).map(|j| format!("x{j}")).collect(),
        converged,
        iterations,
        design: x.clone(),
    })
}

/// Propensity model `expit(λ₀ + Zλ + α u)` on a dataset, with an optional
/// confounder column `u`. An identically zero `u` is dropped from the design
/// and reported as `α = 0`.
pub fn propensity_fit(
    data: &SpatialDataset,
    confounder: Option<(&str, &[f64])>,
    opts: &LogisticOptions,
) -> Result<PropensityFit> {
    let n = data.n();
    let z = data.covariates();
    let p = data.p();
    let extra = match confounder {
        Some((_, u)) if u.len() != n => {
            return Err(Error::Dimension(format!(
                "confounder of length {} for {n} units",
                u.len()
            )))
        }
        Some((_, u)) if u.iter().all(|&v| v == 0.0) => None,
        other => other,
    };
    let k = p + 1 + usize::from(extra.is_some());
    let x = Matrix::from_fn(n, k, |i, j| {
        if j == 0 {
            1.0
        } else if j <= p {
            z[(i, j - 1)]
        } else {
            extra.map_or(0.0, |(_, u)| u[i])
        }
    });
    let mut fit = logistic_fit(&x, data.treatment(), opts)?;
    let mut labels = Vec::with_capacity(k);
    labels.push(String::from("(intercept)"));
    labels.extend(data.names().iter().cloned());
    match (confounder, extra) {
        (Some(_), Some((name, _))) => {
            labels.push(String::from(name));
            fit.alpha_hat = fit.lambda_hat.pop();
        }
        (Some((name, _)), None) => {
            labels.push(String::from(name));
            fit.alpha_hat = Some(0.0);
        }
        _ => {}
    }
    fit.labels = labels;
    Ok(fit)
}
