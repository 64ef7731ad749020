//! Matérn covariance, covariance matrices, Gaussian random field draws and
//! empirical semivariograms.
//!
//! The Matérn kernel here uses the argument scaling `u = 2√ν·h/θ`:
//!
//! ```text
//! C(h) = σ² / (Γ(ν) 2^(ν-1)) · u^ν · K_ν(u)
//! ```
//!
//! This is not the more common `√(2ν)·h/θ` convention; a range fitted with
//! this crate is `√2` times smaller than the same field fitted with that one.
//! At `ν = 1/2` the kernel is `σ² exp(-√2 h / θ)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::special::ln_bessel_k;

/// Orders above this are evaluated as the squared-exponential limit
/// `exp(-(h/θ)²)`.
pub const MAX_SMOOTHNESS: f64 = 50.0;

/// Planar point locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    points: Vec<(f64, f64)>,
}

impl Coordinates {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Dimension("no coordinates".into()));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p.0.is_finite() || !p.1.is_finite())
        {
            return Err(Error::ParameterDomain(format!(
                "non-finite coordinate at point {i}"
            )));
        }
        Ok(Coordinates { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[j]);
        libm::hypot(a.0 - b.0, a.1 - b.1)
    }

    pub fn max_distance(&self) -> f64 {
        let n = self.len();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                m = m.max(self.distance(i, j));
            }
        }
        m
    }

    /// First pair of coincident points, if any.
    pub fn first_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.len();
        for i in 0..n {
            for j in 0..i {
                if self.points[i] == self.points[j] {
                    return Some((j, i));
                }
            }
        }
        None
    }
}

/// Matérn-plus-nugget covariance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    /// Partial sill σ².
    pub sigma2: f64,
    /// Range θ.
    pub theta: f64,
    /// Smoothness ν.
    pub nu: f64,
    /// Nugget σ_e², only ever added on the diagonal.
    pub nugget: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, theta: f64, nu: f64, nugget: f64) -> Result<Self> {
        let p = MaternParams {
            sigma2,
            theta,
            nu,
            nugget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.sigma2) && self.sigma2 >= 0.0) {
            return Err(Error::ParameterDomain(format!(
                "sigma2 = {} must be >= 0",
                self.sigma2
            )));
        }
        if !(ok(self.theta) && self.theta > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "theta = {} must be > 0",
                self.theta
            )));
        }
        if !(ok(self.nu) && self.nu > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "nu = {} must be > 0",
                self.nu
            )));
        }
        if !(ok(self.nugget) && self.nugget >= 0.0) {
            return Err(Error::ParameterDomain(format!(
                "nugget = {} must be >= 0",
                self.nugget
            )));
        }
        Ok(())
    }

    /// Covariance at distance `h`, nugget excluded. Parameters are assumed valid.
    #[inline]
    pub fn covariance(&self, h: f64) -> f64 {
        self.sigma2 * matern_correlation(h, self.theta, self.nu)
    }

    /// Model semivariogram `γ(h) = σ_e² + σ² (1 - ρ(h))` for `h > 0`.
    #[inline]
    pub fn semivariance(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.sigma2 * (1.0 - matern_correlation(h, self.theta, self.nu))
    }
}

/// Matérn correlation `ρ(h)` with unit variance.
pub fn matern_correlation(h: f64, theta: f64, nu: f64) -> f64 {
    if h <= 0.0 {
        return 1.0;
    }
    if nu > MAX_SMOOTHNESS {
        let r = h / theta;
        return libm::exp(-r * r);
    }
    let u = 2.0 * libm::sqrt(nu) * h / theta;
    let ln_rho = nu * libm::log(u) + ln_bessel_k(nu, u)
        - libm::lgamma(nu)
        - (nu - 1.0) * core::f64::consts::LN_2;
    // Rounding can push the log a hair above zero for tiny u.
    libm::exp(ln_rho).min(1.0)
}

/// Matérn covariance `C(h; σ², θ, ν)`; the nugget is not included.
pub fn matern_cov(h: f64, p: &MaternParams) -> Result<f64> {
    p.validate()?;
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "distance {h} must be finite and >= 0"
        )));
    }
    Ok(p.covariance(h))
}

/// Dense covariance matrix over `coords`. The diagonal is `σ²`, plus `σ_e²`
/// when `include_nugget` is set.
pub fn cov_matrix(coords: &Coordinates, p: &MaternParams, include_nugget: bool) -> Result<Matrix> {
    p.validate()?;
    let diag_extra = if include_nugget { p.nugget } else { 0.0 };
    if diag_extra == 0.0 {
        if let Some((i, j)) = coords.first_duplicate() {
            return Err(Error::Singular(format!(
                "points {i} and {j} coincide and no nugget is added"
            )));
        }
    }
    let mut m = field_covariance(coords, p);
    m.add_to_diagonal(diag_extra);
    Ok(m)
}

/// `Σ_U` without the nugget and without the coincident-point check.
pub fn field_covariance(coords: &Coordinates, p: &MaternParams) -> Matrix {
    let n = coords.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = p.sigma2;
        for j in 0..i {
            let c = p.covariance(coords.distance(i, j));
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}

/// Reusable sampler for a centered Gaussian random field on fixed points.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    factor: Cholesky,
}

impl GrfSampler {
    pub fn new(coords: &Coordinates, p: &MaternParams) -> Result<Self> {
        let cov = cov_matrix(coords, p, false)?;
        Self::from_covariance(&cov, p.sigma2.max(f64::MIN_POSITIVE))
    }

    /// Sampler for an arbitrary covariance; `scale` sizes the jitter.
    pub fn from_covariance(cov: &Matrix, scale: f64) -> Result<Self> {
        let factor = Cholesky::factor_stabilized(cov, scale)?;
        Ok(GrfSampler { factor })
    }

    pub fn from_factor(factor: Cholesky) -> Self {
        GrfSampler { factor }
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.factor.mul_lower(&z)
    }
}

/// One seeded draw of a centered Matérn field at `coords`.
pub fn sample_grf(coords: &Coordinates, p: &MaternParams, seed: u64) -> Result<Vec<f64>> {
    let sampler = GrfSampler::new(coords, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

/// Semivariogram binning rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub n_bins: usize,
    /// Largest lag considered; `None` means half the largest pairwise distance.
    pub max_lag: Option<f64>,
    pub min_points: usize,
    pub min_nonempty_bins: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            n_bins: 15,
            max_lag: None,
            min_points: 10,
            min_nonempty_bins: 3,
        }
    }
}

/// One lag class of an empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramBin {
    /// Midpoint of the lag class.
    pub lag: f64,
    /// Average separation of the pairs in the class.
    pub mean_distance: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Pair-to-bin assignment for a fixed point set, reusable across fields.
#[derive(Debug, Clone)]
pub struct VariogramBinning {
    n_points: usize,
    n_bins: usize,
    width: f64,
    min_nonempty: usize,
    pairs: Vec<(u32, u32, u32)>,
    distance_sums: Vec<f64>,
    counts: Vec<usize>,
}

impl VariogramBinning {
    pub fn new(coords: &Coordinates, spec: &BinSpec) -> Result<Self> {
        let n = coords.len();
        if n < spec.min_points.max(2) {
            return Err(Error::Binning(format!(
                "{n} points, at least {} required",
                spec.min_points.max(2)
            )));
        }
        if spec.n_bins == 0 {
            return Err(Error::Binning("zero bins requested".into()));
        }
        let max_lag = match spec.max_lag {
            Some(m) => m,
            None => 0.5 * coords.max_distance(),
        };
        if !(max_lag > 0.0) || !max_lag.is_finite() {
            return Err(Error::Binning(format!(
                "maximum lag {max_lag} must be positive"
            )));
        }
        let width = max_lag / spec.n_bins as f64;
        let mut pairs = Vec::new();
        let mut distance_sums = vec![0.0; spec.n_bins];
        let mut counts = vec![0usize; spec.n_bins];
        for i in 0..n {
            for j in 0..i {
                let h = coords.distance(i, j);
                if h > max_lag {
                    continue;
                }
                let b = ((h / width) as usize).min(spec.n_bins - 1);
                pairs.push((i as u32, j as u32, b as u32));
                distance_sums[b] += h;
                counts[b] += 1;
            }
        }
        let nonempty = counts.iter().filter(|&&c| c > 0).count();
        if nonempty < spec.min_nonempty_bins {
            return Err(Error::Binning(format!(
                "{nonempty} non-empty bins, at least {} required",
                spec.min_nonempty_bins
            )));
        }
        Ok(VariogramBinning {
            n_points: n,
            n_bins: spec.n_bins,
            width,
            min_nonempty: spec.min_nonempty_bins,
            pairs,
            distance_sums,
            counts,
        })
    }

    /// Empirical semivariogram of `values`; empty classes are omitted.
    pub fn semivariogram(&self, values: &[f64]) -> Result<Vec<VariogramBin>> {
        if values.len() != self.n_points {
            return Err(Error::Dimension(format!(
                "{} values for {} points",
                values.len(),
                self.n_points
            )));
        }
        let mut sums = vec![0.0; self.n_bins];
        for &(i, j, b) in &self.pairs {
            let d = values[i as usize] - values[j as usize];
            sums[b as usize] += 0.5 * d * d;
        }
        let bins: Vec<VariogramBin> = (0..self.n_bins)
            .filter(|&b| self.counts[b] > 0)
            .map(|b| {
                let c = self.counts[b] as f64;
                VariogramBin {
                    lag: (b as f64 + 0.5) * self.width,
                    mean_distance: self.distance_sums[b] / c,
                    semivariance: sums[b] / c,
                    pairs: self.counts[b],
                }
            })
            .collect();
        debug_assert!(bins.len() >= self.min_nonempty);
        Ok(bins)
    }
}

/// Empirical semivariogram: per lag class, the mean of `½(v_i - v_j)²`.
pub fn empirical_semivariogram(
    coords: &Coordinates,
    values: &[f64],
    bins: &BinSpec,
) -> Result<Vec<VariogramBin>> {
    VariogramBinning::new(coords, bins)?.semivariogram(values)
}
