//! Outcome model `Y = Aβ + 1·b₀ + Zγ + U + ε`: generalized least squares for
//! the coefficients and iteratively re-weighted semivariogram fitting for the
//! Matérn-plus-nugget covariance of `U + ε`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geo_field::{
    cov_matrix, BinSpec, Coordinates, MaternParams, VariogramBin, VariogramBinning,
};
use crate::linalg::{Cholesky, Matrix};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Observed data on a set of locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    coords: Coordinates,
    outcome: Vec<f64>,
    treatment: Vec<f64>,
    covariates: Matrix,
    names: Vec<String>,
}

impl SpatialDataset {
    /// Validates lengths, finiteness and the 0/1 coding of `treatment`.
    pub fn new(
        coords: Coordinates,
        outcome: Vec<f64>,
        treatment: Vec<f64>,
        covariates: Matrix,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = coords.len();
        if outcome.len() != n || treatment.len() != n || covariates.rows() != n {
            return Err(Error::Dimension(format!(
                "{n} locations, {} outcomes, {} treatments, {} covariate rows",
                outcome.len(),
                treatment.len(),
                covariates.rows()
            )));
        }
        if names.len() != covariates.cols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                covariates.cols()
            )));
        }
        if let Some(i) = treatment.iter().position(|&a| a != 0.0 && a != 1.0) {
            return Err(Error::ParameterDomain(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                treatment[i]
            )));
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "non-finite outcome at row {i}"
            )));
        }
        if let Some(k) = covariates.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "non-finite covariate at row {}, column {}",
                k / covariates.cols().max(1),
                k % covariates.cols().max(1)
            )));
        }
        Ok(SpatialDataset {
            coords,
            outcome,
            treatment,
            covariates,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1.0).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn require_both_groups(&self) -> Result<()> {
        if self.n_treated() == 0 {
            return Err(Error::EmptyGroup("no treated units".into()));
        }
        if self.n_control() == 0 {
            return Err(Error::EmptyGroup("no control units".into()));
        }
        Ok(())
    }

    /// Same locations and covariates with new treatment and outcome vectors.
    pub fn with_response(&self, treatment: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        SpatialDataset::new(
            self.coords.clone(),
            outcome,
            treatment,
            self.covariates.clone(),
            self.names.clone(),
        )
    }

    /// Keeps only the named covariate columns, in the given order.
    pub fn select_covariates(&self, keep: &[&str]) -> Result<Self> {
        let idx: Vec<usize> =
            keep.iter()
                .map(|k| {
                    self.names.iter().position(|n| n == k).ok_or_else(|| {
                        Error::MissingInput(format!("covariate {k:?} not in dataset"))
                    })
                })
                .collect::<Result<_>>()?;
        let z = Matrix::from_fn(self.n(), idx.len(), |i, j| self.covariates[(i, idx[j])]);
        SpatialDataset::new(
            self.coords.clone(),
            self.outcome.clone(),
            self.treatment.clone(),
            z,
            idx.iter().map(|&j| self.names[j].clone()).collect(),
        )
    }

    /// Drops one covariate column by name.
    pub fn drop_covariate(&self, name: &str) -> Result<Self> {
        if !self.names.iter().any(|n| n == name) {
            return Err(Error::MissingInput(format!(
                "covariate {name:?} not in dataset"
            )));
        }
        let keep: Vec<&str> = self
            .names
            .iter()
            .filter(|n| *n != name)
            .map(|s| s.as_str())
            .collect();
        self.select_covariates(&keep)
    }
}

/// Coefficients and their sampling covariance `(XᵀV⁻¹X)⁻¹`.
#[derive(Debug, Clone)]
pub struct GlsFit {
    /// Ordered as `[treatment, intercept, covariates...]`.
    pub coefficients: Vec<f64>,
    pub coef_cov: Matrix,
}

impl GlsFit {
    pub fn beta(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn beta_se(&self) -> f64 {
        libm::sqrt(self.coef_cov[(0, 0)])
    }
}

/// Column labels of the outcome design.
pub fn design_labels(data: &SpatialDataset) -> Vec<String> {
    let mut labels = Vec::with_capacity(data.p() + 2);
    labels.push(String::from("treatment"));
    labels.push(String::from("(intercept)"));
    labels.extend(data.names.iter().cloned());
    labels
}

/// The outcome design `[A | 1 | Z]`.
pub fn outcome_design(data: &SpatialDataset) -> Matrix {
    Matrix::from_fn(data.n(), data.p() + 2, |i, j| match j {
        0 => data.treatment[i],
        1 => 1.0,
        _ => data.covariates[(i, j - 2)],
    })
}

/// Least squares on an already whitened system (plain OLS when `V = I`).
/// Rank deficiency is detected on the column-scaled normal equations.
pub fn least_squares(xw: &Matrix, yw: &[f64]) -> Result<GlsFit> {
    let k = xw.cols();
    let gram = xw.gram();
    let xty = xw.t_matvec(yw);
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let d = gram[(j, j)];
            if d > 0.0 {
                1.0 / libm::sqrt(d)
            } else {
                0.0
            }
        })
        .collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::SingularDesign(format!(
            "design column {j} is identically zero"
        )));
    }
    let scaled = Matrix::from_fn(k, k, |a, b| gram[(a, b)] * scale[a] * scale[b]);
    let chol = Cholesky::factor_with_tolerance(&scaled, 1e-10)
        .map_err(|_| Error::SingularDesign("design matrix is not of full column rank".into()))?;
    let rhs: Vec<f64> = (0..k).map(|j| xty[j] * scale[j]).collect();
    let sol = chol.solve(&rhs);
    let coefficients: Vec<f64> = (0..k).map(|j| sol[j] * scale[j]).collect();
    let inv = chol.inverse();
    let coef_cov = Matrix::from_fn(k, k, |a, b| inv[(a, b)] * scale[a] * scale[b]);
    Ok(GlsFit {
        coefficients,
        coef_cov,
    })
}

/// GLS with a fixed covariance factor. The intercept and covariate columns
/// are whitened once, so refits with new treatment/outcome vectors cost two
/// triangular solves.
#[derive(Debug, Clone)]
pub struct GlsSolver {
    factor: Cholesky,
    fixed_white: Matrix,
}

impl GlsSolver {
    pub fn new(factor: Cholesky, covariates: &Matrix) -> Result<Self> {
        let n = factor.dim();
        if covariates.rows() != n {
            return Err(Error::Dimension(format!(
                "{} covariate rows for a {n}x{n} covariance",
                covariates.rows()
            )));
        }
        let p = covariates.cols();
        let fixed = Matrix::from_fn(
            n,
            p + 1,
            |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] },
        );
        let fixed_white = factor.whiten_columns(&fixed);
        Ok(GlsSolver {
            factor,
            fixed_white,
        })
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn fit(&self, treatment: &[f64], outcome: &[f64]) -> Result<GlsFit> {
        let n = self.factor.dim();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Dimension("response length".into()));
        }
        let mut aw = treatment.to_vec();
        self.factor.solve_lower_in_place(&mut aw);
        let mut yw = outcome.to_vec();
        self.factor.solve_lower_in_place(&mut yw);
        let k = self.fixed_white.cols() + 1;
        let xw = Matrix::from_fn(n, k, |i, j| {
            if j == 0 {
                aw[i]
            } else {
                self.fixed_white[(i, j - 1)]
            }
        });
        least_squares(&xw, &yw)
    }
}

/// Solves `(XᵀV⁻¹X) b = XᵀV⁻¹Y` for the design `X = [A | 1 | Z]`.
pub fn gls_fit(data: &SpatialDataset, cov: &Matrix) -> Result<GlsFit> {
    if cov.rows() != data.n() || cov.cols() != data.n() {
        return Err(Error::Dimension(
            "covariance does not match the data".into(),
        ));
    }
    let scale = cov.trace() / data.n() as f64;
    let factor = Cholesky::factor_stabilized(cov, scale)?;
    GlsSolver::new(factor, &data.covariates)?.fit(&data.treatment, &data.outcome)
}

/// `Y - Aβ - b₀ - Zγ`.
pub fn outcome_residuals(
    data: &SpatialDataset,
    beta: f64,
    intercept: f64,
    gamma: &[f64],
) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let zg: f64 = data
                .covariates
                .row(i)
                .iter()
                .zip(gamma)
                .map(|(z, g)| z * g)
                .sum();
            data.outcome[i] - data.treatment[i] * beta - intercept - zg
        })
        .collect()
}

/// Fitted outcome model.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub beta_hat: f64,
    pub intercept: f64,
    /// One coefficient per covariate column.
    pub gamma_hat: Vec<f64>,
    pub matern: MaternParams,
    /// `Y - Aβ̂ - b̂₀ - Zγ̂`.
    pub residuals: Vec<f64>,
    pub labels: Vec<String>,
    pub coef_cov: Matrix,
    pub converged: bool,
    pub iterations: usize,
    factor: Cholesky,
}

impl OutcomeFit {
    pub fn beta_se(&self) -> f64 {
        libm::sqrt(self.coef_cov[(0, 0)])
    }

    /// Cholesky factor of `Σ̂_U + σ̂_e² I` used for the final GLS pass.
    pub fn covariance_factor(&self) -> &Cholesky {
        &self.factor
    }

    /// Covariate part of the control mean, `b̂₀ + Z_i γ̂`.
    pub fn covariate_mean(&self, data: &SpatialDataset) -> Vec<f64> {
        (0..data.n())
            .map(|i| {
                self.intercept
                    + data
                        .covariates
                        .row(i)
                        .iter()
                        .zip(&self.gamma_hat)
                        .map(|(z, g)| z * g)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Options for [`irwls_covariance_fit`].
#[derive(Debug, Clone, Copy)]
pub struct IrwlsOptions {
    pub max_iter: usize,
    /// Relative parameter change that ends the alternation. An infinite
    /// tolerance requests a single pass with no convergence test.
    pub tol: f64,
    pub bins: BinSpec,
    pub nu_bounds: (f64, f64),
}

impl Default for IrwlsOptions {
    fn default() -> Self {
        IrwlsOptions {
            max_iter: 20,
            tol: 1e-3,
            bins: BinSpec::default(),
            nu_bounds: (0.05, 3.0),
        }
    }
}

/// Builds the GLS model for fixed covariance parameters.
pub fn fit_with_params(data: &SpatialDataset, params: &MaternParams) -> Result<OutcomeFit> {
    let cov = cov_matrix(data.coords(), params, true)?;
    let factor = Cholesky::factor_stabilized(&cov, params.sigma2 + params.nugget)?;
    let solver = GlsSolver::new(factor, data.covariates())?;
    let gls = solver.fit(data.treatment(), data.outcome())?;
    Ok(assemble_fit(data, gls, *params, solver.factor, false, 0))
}

fn assemble_fit(
    data: &SpatialDataset,
    gls: GlsFit,
    matern: MaternParams,
    factor: Cholesky,
    converged: bool,
    iterations: usize,
) -> OutcomeFit {
    let beta_hat = gls.coefficients[0];
    let intercept = gls.coefficients[1];
    let gamma_hat = gls.coefficients[2..].to_vec();
    let residuals = outcome_residuals(data, beta_hat, intercept, &gamma_hat);
    OutcomeFit {
        beta_hat,
        intercept,
        gamma_hat,
        matern,
        residuals,
        labels: design_labels(data),
        coef_cov: gls.coef_cov,
        converged,
        iterations,
        factor,
    }
}

/// Heuristic starting values from a residual vector.
pub fn initial_params(coords: &Coordinates, residuals: &[f64]) -> MaternParams {
    let n = residuals.len().max(2) as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / (n - 1.0);
    let var = if var > 0.0 { var } else { 1.0 };
    MaternParams {
        sigma2: 0.8 * var,
        theta: (coords.max_distance() / 6.0).max(1e-6),
        nu: 0.5,
        nugget: 0.2 * var,
    }
}

struct Transform {
    scale: f64,
    theta_max: f64,
    nu_lo: f64,
    nu_hi: f64,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    libm::log(p / (1.0 - p))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl Transform {
    fn encode(&self, p: &MaternParams) -> [f64; 4] {
        [
            libm::sqrt(p.sigma2 / self.scale),
            logit(p.theta / self.theta_max),
            logit((p.nu - self.nu_lo) / (self.nu_hi - self.nu_lo)),
            libm::sqrt(p.nugget / self.scale),
        ]
    }

    fn decode(&self, z: &[f64]) -> MaternParams {
        MaternParams {
            sigma2: z[0] * z[0] * self.scale,
            theta: (self.theta_max * sigmoid(z[1])).max(1e-12 * self.theta_max),
            nu: self.nu_lo + (self.nu_hi - self.nu_lo) * sigmoid(z[2]),
            nugget: z[3] * z[3] * self.scale,
        }
    }
}

fn relative_change(old: &MaternParams, new: &MaternParams) -> f64 {
    let total = (old.sigma2 + old.nugget).max(f64::MIN_POSITIVE);
    let rel = |a: f64, b: f64, floor: f64| (b - a).abs() / a.abs().max(floor);
    rel(old.sigma2, new.sigma2, 1e-3 * total)
        .max(rel(old.theta, new.theta, f64::MIN_POSITIVE))
        .max(rel(old.nu, new.nu, f64::MIN_POSITIVE))
        .max(rel(old.nugget, new.nugget, 1e-3 * total))
}

/// Weighted least-squares fit of the Matérn-plus-nugget model to an empirical
/// semivariogram, with weights `n_j / γ(h_j)²` re-evaluated at the current
/// parameters until they settle.
pub fn fit_semivariogram(
    bins: &[VariogramBin],
    start: &MaternParams,
    theta_max: f64,
    nu_bounds: (f64, f64),
) -> Result<MaternParams> {
    let scale = bins.iter().map(|b| b.semivariance).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Fit(
            "semivariogram is identically zero (constant residuals)".into(),
        ));
    }
    if !(theta_max > 0.0) {
        return Err(Error::Fit("non-positive range bound".into()));
    }
    let tf = Transform {
        scale,
        theta_max,
        nu_lo: nu_bounds.0,
        nu_hi: nu_bounds.1,
    };
    let clamp_start = |p: &MaternParams| MaternParams {
        sigma2: p.sigma2.max(0.0),
        theta: p.theta.min(theta_max),
        nu: p.nu.clamp(nu_bounds.0, nu_bounds.1),
        nugget: p.nugget.max(0.0),
    };
    let last = bins.last().map_or(scale, |b| b.semivariance);
    let first = bins.first().map_or(0.0, |b| b.semivariance);
    let heuristic = MaternParams {
        sigma2: (last - 0.5 * first).max(0.05 * last),
        theta: theta_max / 6.0,
        nu: 0.5f64.clamp(nu_bounds.0, nu_bounds.1),
        nugget: 0.5 * first,
    };
    let opts = NelderMeadOptions {
        max_evals: 1500,
        f_tol: 1e-13,
        x_tol: 1e-8,
    };

    let mut current = clamp_start(start);
    for _pass in 0..6 {
        let weights: Vec<f64> = bins
            .iter()
            .map(|b| {
                let g = current.semivariance(b.mean_distance).max(1e-8 * scale);
                b.pairs as f64 / (g * g)
            })
            .collect();
        let objective = |z: &[f64]| {
            let p = tf.decode(z);
            bins.iter()
                .zip(&weights)
                .map(|(b, w)| {
                    let d = b.semivariance - p.semivariance(b.mean_distance);
                    w * d * d
                })
                .sum::<f64>()
        };
        let mut best: Option<(f64, MaternParams)> = None;
        for s in [current, clamp_start(&heuristic)] {
            let z0 = tf.encode(&s);
            let step = [0.2 + 0.2 * z0[0].abs(), 0.7, 0.7, 0.2 + 0.2 * z0[3].abs()];
            let m = nelder_mead(objective, &z0, &step, &opts);
            // polish from the best vertex
            let m2 = nelder_mead(objective, &m.x, &[0.05, 0.2, 0.2, 0.05], &opts);
            let (v, z) = if m2.value <= m.value {
                (m2.value, m2.x)
            } else {
                (m.value, m.x)
            };
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, tf.decode(&z)));
            }
        }
        let (value, next) = best.ok_or_else(|| Error::Fit("no optimizer result".into()))?;
        if !value.is_finite() || next.validate().is_err() {
            return Err(Error::Fit(format!(
                "semivariogram optimizer diverged: {next:?}"
            )));
        }
        let change = relative_change(&current, &next);
        current = next;
        if change < 1e-4 {
            break;
        }
    }
    Ok(current)
}

/// Alternates GLS coefficients and a re-weighted semivariogram fit of the
/// current residuals. The first GLS pass uses the identity covariance.
pub fn irwls_covariance_fit(
    data: &SpatialDataset,
    init: &MaternParams,
    opts: &IrwlsOptions,
) -> Result<OutcomeFit> {
    init.validate()?;
    if opts.max_iter == 0 {
        return Err(Error::ParameterDomain("max_iter must be at least 1".into()));
    }
    let binning = VariogramBinning::new(data.coords(), &opts.bins)?;
    let theta_max = 2.0 * data.coords().max_distance();

    // Ordinary least squares start.
    let ols = least_squares(&outcome_design(data), data.outcome())?;
    let mut residuals = outcome_residuals(
        data,
        ols.coefficients[0],
        ols.coefficients[1],
        &ols.coefficients[2..],
    );
    let mut params = *init;
    let single_pass = opts.tol.is_infinite();
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(GlsFit, Cholesky)> = None;

    for it in 1..=opts.max_iter {
        iterations = it;
        let bins = binning.semivariogram(&residuals)?;
        let next = fit_semivariogram(&bins, &params, theta_max, opts.nu_bounds)?;
        let change = relative_change(&params, &next);
        params = next;

        let cov = cov_matrix(data.coords(), &params, true)?;
        let factor = Cholesky::factor_stabilized(&cov, params.sigma2 + params.nugget)?;
        let solver = GlsSolver::new(factor, data.covariates())?;
        let gls = solver.fit(data.treatment(), data.outcome())?;
        residuals = outcome_residuals(
            data,
            gls.coefficients[0],
            gls.coefficients[1],
            &gls.coefficients[2..],
        );
        last = Some((gls, solver.factor));

        if single_pass {
            break;
        }
        if it > 1 && change < opts.tol {
            converged = true;
            break;
        }
    }
    let (gls, factor) = last.ok_or_else(|| Error::Fit("no iteration ran".into()))?;
    Ok(assemble_fit(
        data, gls, params, factor, converged, iterations,
    ))
}

/// [`irwls_covariance_fit`] started from [`initial_params`] of the ordinary
/// least squares residuals.
pub fn fit_outcome_model(data: &SpatialDataset, opts: &IrwlsOptions) -> Result<OutcomeFit> {
    let ols = least_squares(&outcome_design(data), data.outcome())?;
    let residuals = outcome_residuals(
        data,
        ols.coefficients[0],
        ols.coefficients[1],
        &ols.coefficients[2..],
    );
    irwls_covariance_fit(data, &initial_params(data.coords(), &residuals), opts)
}
