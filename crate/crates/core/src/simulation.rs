//! Simulation study: scenario definitions, data generation, per-replicate
//! evaluation of all methods, and summary metrics.
//!
//! Replicate `k` of a scenario draws from its own random stream, so any
//! subset of replicates can be evaluated independently and in any order.
//! [`summarize`] orders outcomes by replicate index before reducing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bootstrap::{parametric_bootstrap, replicate_rng, BootstrapMode, BootstrapSpec};
use crate::causal::{
    att_weights, expit, gold_att, naive_att, recoveru_from_parts, smd, AttResult, EstimateOptions,
    Method,
};
use crate::error::{Error, Result};
use crate::geo_field::{Coordinates, GrfSampler, MaternParams};
use crate::linalg::Matrix;
use crate::recovery::smoother_for_fit;
use crate::spatial_model::{fit_outcome_model, SpatialDataset};

/// Confounding strengths of the standard grid.
pub const C_GRID: [f64; 3] = [1.5, 0.75, 0.3];
/// Smoothness values of the standard grid.
pub const NU_GRID: [f64; 4] = [0.1, 0.5, 0.75, 1.5];
/// The effect on the treated in every generated data set.
pub const TRUE_ATT: f64 = 1.0;

const OUTCOME_COEF: [f64; 4] = [0.55, 0.21, 1.17, -1.5];
const PROPENSITY_INTERCEPT: f64 = -0.85;
const PROPENSITY_COEF: [f64; 4] = [0.1, 0.2, -0.1, -0.7];
const NOISE_VARIANCE: f64 = 0.1;
const INTERACTION: f64 = 0.75;
const FIELD_RANGE: f64 = 5.0;
const COVARIATE_RANGES: (f64, f64) = (3.0, 7.0);

/// Stream index reserved for the location layout.
const LAYOUT_STREAM: u64 = u64::MAX;

/// Data-generating and fitting regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// Both fitted models contain every true term.
    Correct,
    /// The true outcome mean has a `Z₃Z₄` interaction the fitted model omits.
    MisspecOutcome,
    /// `Z₄` is left out of both fitted models.
    MisspecBoth,
    SpatialCorrect,
    SpatialMisspecOutcome,
    SpatialMisspecBoth,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Correct,
        Regime::MisspecOutcome,
        Regime::MisspecBoth,
        Regime::SpatialCorrect,
        Regime::SpatialMisspecOutcome,
        Regime::SpatialMisspecBoth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Correct => "correct",
            Regime::MisspecOutcome => "misspec-outcome",
            Regime::MisspecBoth => "misspec-both",
            Regime::SpatialCorrect => "spatial-correct",
            Regime::SpatialMisspecOutcome => "spatial-misspec-outcome",
            Regime::SpatialMisspecBoth => "spatial-misspec-both",
        }
    }

    /// `Z₃` and `Z₄` are Gaussian random fields rather than iid noise.
    pub fn spatial_covariates(self) -> bool {
        matches!(
            self,
            Regime::SpatialCorrect | Regime::SpatialMisspecOutcome | Regime::SpatialMisspecBoth
        )
    }

    pub fn has_interaction(self) -> bool {
        matches!(self, Regime::MisspecOutcome | Regime::SpatialMisspecOutcome)
    }

    pub fn omits_z4(self) -> bool {
        matches!(self, Regime::MisspecBoth | Regime::SpatialMisspecBoth)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Regime::ALL.iter().map(|r| r.as_str()).collect();
                format!(
                    "unknown regime {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Confounding strength: coefficient of `U` in the propensity model.
    pub c: f64,
    /// Smoothness of the confounding field.
    pub nu: f64,
    pub regime: Regime,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Side length of the square sampling window.
    pub domain: f64,
    /// Bootstrap replicates per data set for the recovery estimator's
    /// interval; `None` reports point estimates only.
    pub bootstrap: Option<usize>,
    pub bootstrap_mode: BootstrapMode,
    pub methods: Vec<Method>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            c: 1.5,
            nu: 1.5,
            regime: Regime::Correct,
            n: 500,
            replicates: 500,
            seed: 0,
            domain: 20.0,
            bootstrap: None,
            bootstrap_mode: BootstrapMode::FrozenCovariance,
            methods: Method::ALL.to_vec(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "confounding strength {} is not finite",
                self.c
            )));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "smoothness {} must be positive",
                self.nu
            )));
        }
        if self.n < 10 {
            return Err(Error::ParameterDomain(format!(
                "n = {} is too small (need at least 10)",
                self.n
            )));
        }
        if self.replicates == 0 {
            return Err(Error::ParameterDomain(
                "replicates must be at least 1".into(),
            ));
        }
        if !(self.domain > 0.0 && self.domain.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "domain {} must be positive",
                self.domain
            )));
        }
        if self.bootstrap.is_some_and(|b| b < 2) {
            return Err(Error::ParameterDomain(
                "bootstrap needs at least 2 replicates".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::ParameterDomain("no methods requested".into()));
        }
        Ok(())
    }

    /// Standard grids of `c` and `ν` for one regime.
    pub fn grid(regime: Regime, template: &Scenario) -> Vec<Scenario> {
        let mut out = Vec::with_capacity(C_GRID.len() * NU_GRID.len());
        for &c in &C_GRID {
            for &nu in &NU_GRID {
                out.push(Scenario {
                    c,
                    nu,
                    regime,
                    ..template.clone()
                });
            }
        }
        out
    }

    fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// One generated data set.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Observed data, with the covariates visible to the fitted models.
    pub data: SpatialDataset,
    pub true_u: Vec<f64>,
    pub true_att: f64,
}

/// Bernoulli treatment with logit `-0.85 + Zb + cU`.
fn draw_treatment<R: Rng + ?Sized>(
    rng: &mut R,
    z: &Matrix,
    u: &[f64],
    coef: &[f64],
    c: f64,
) -> Vec<f64> {
    (0..z.rows())
        .map(|i| {
            let eta = PROPENSITY_INTERCEPT
                + z.row(i).iter().zip(coef).map(|(x, b)| x * b).sum::<f64>()
                + c * u[i];
            f64::from(u8::from(rng.random::<f64>() < expit(eta)))
        })
        .collect()
}

/// Location layout and field samplers shared by all replicates of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioContext {
    scenario: Scenario,
    coords: Coordinates,
    u_field: GrfSampler,
    covariate_fields: Option<(GrfSampler, GrfSampler)>,
}

impl ScenarioContext {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let mut rng = replicate_rng(scenario.seed, LAYOUT_STREAM);
        let pts = (0..scenario.n)
            .map(|_| {
                (
                    scenario.domain * rng.random::<f64>(),
                    scenario.domain * rng.random::<f64>(),
                )
            })
            .collect();
        let coords = Coordinates::new(pts)?;
        let u_field = GrfSampler::new(
            &coords,
            &MaternParams::new(1.0, FIELD_RANGE, scenario.nu, 0.0)?,
        )?;
        let covariate_fields = if scenario.regime.spatial_covariates() {
            Some((
                GrfSampler::new(
                    &coords,
                    &MaternParams::new(1.0, COVARIATE_RANGES.0, 0.5, 0.0)?,
                )?,
                GrfSampler::new(
                    &coords,
                    &MaternParams::new(1.0, COVARIATE_RANGES.1, 0.5, 0.0)?,
                )?,
            ))
        } else {
            None
        };
        Ok(ScenarioContext {
            scenario: scenario.clone(),
            coords,
            u_field,
            covariate_fields,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    /// Replicate `index` of the scenario.
    pub fn generate(&self, index: u64) -> Result<SimulatedData> {
        let sc = &self.scenario;
        let n = sc.n;
        let mut rng = replicate_rng(sc.seed, index);
        let u = self.u_field.sample(&mut rng);
        let mut z = Matrix::zeros(n, 4);
        for i in 0..n {
            for j in 0..2 {
                z[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        match &self.covariate_fields {
            Some((f3, f4)) => {
                let (z3, z4) = (f3.sample(&mut rng), f4.sample(&mut rng));
                for i in 0..n {
                    z[(i, 2)] = z3[i];
                    z[(i, 3)] = z4[i];
                }
            }
            None => {
                for i in 0..n {
                    for j in 2..4 {
                        z[(i, j)] = StandardNormal.sample(&mut rng);
                    }
                }
            }
        }
        let a = draw_treatment(&mut rng, &z, &u, &PROPENSITY_COEF, sc.c);
        let noise_sd = libm::sqrt(NOISE_VARIANCE);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = z.row(i);
            let eps: f64 = StandardNormal.sample(&mut rng);
            let mut mean = TRUE_ATT * a[i]
                + row
                    .iter()
                    .zip(&OUTCOME_COEF)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
                + u[i];
            if sc.regime.has_interaction() {
                mean += INTERACTION * row[2] * row[3];
            }
            y.push(mean + noise_sd * eps);
        }
        let names = ["Z1", "Z2", "Z3", "Z4"].map(String::from).to_vec();
        let mut data = SpatialDataset::new(self.coords.clone(), y, a, z, names)?;
        if sc.regime.omits_z4() {
            data = data.drop_covariate("Z4")?;
        }
        Ok(SimulatedData {
            data,
            true_u: u,
            true_att: TRUE_ATT,
        })
    }

    /// Generates replicate `index` and evaluates every requested method.
    /// Individual method failures are recorded rather than propagated.
    pub fn run_replicate(&self, index: u64, opts: &EstimateOptions) -> Result<ReplicateOutcome> {
        let sim = self.generate(index)?;
        Ok(evaluate(&self.scenario, &sim, index, opts))
    }
}

/// Per-method result on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub att: AttResult,
    /// ATT-weighted SMD of the true confounder under this method's
    /// propensity model, when it has one.
    pub smd_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub results: Vec<MethodOutcome>,
    pub failures: Vec<(Method, Error)>,
    /// Correlation between the true and recovered confounder.
    pub corr_u: Option<f64>,
    /// Unweighted SMD of the true confounder.
    pub smd_u_unadjusted: Option<f64>,
    pub treated_fraction: f64,
}

impl ReplicateOutcome {
    pub fn get(&self, method: Method) -> Option<&MethodOutcome> {
        self.results.iter().find(|r| r.method == method)
    }

    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Derives the bootstrap master seed of one replicate.
pub fn bootstrap_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn weighted_smd(u: &[f64], data: &SpatialDataset, scores: &[f64]) -> Option<f64> {
    smd(
        u,
        data.treatment(),
        Some(&att_weights(data.treatment(), scores)),
    )
    .ok()
}

/// Evaluates the requested methods on a generated data set.
pub fn evaluate(
    sc: &Scenario,
    sim: &SimulatedData,
    index: u64,
    opts: &EstimateOptions,
) -> ReplicateOutcome {
    let data = &sim.data;
    let u = &sim.true_u;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut corr_u = None;

    if sc.wants(Method::Naive) {
        match naive_att(data, opts) {
            Ok((att, ps)) => results.push(MethodOutcome {
                method: Method::Naive,
                att,
                smd_u: weighted_smd(u, data, &ps.scores),
            }),
            Err(e) => failures.push((Method::Naive, e)),
        }
    }

    if sc.wants(Method::Gls) || sc.wants(Method::RecoverU) {
        match fit_outcome_model(data, &opts.irwls) {
            Ok(fit) => {
                if sc.wants(Method::Gls) {
                    results.push(MethodOutcome {
                        method: Method::Gls,
                        att: AttResult::new(
                            Method::Gls,
                            fit.beta_hat,
                            fit.beta_se(),
                            data.n_treated(),
                            data.n_control(),
                        ),
                        smd_u: None,
                    });
                }
                if sc.wants(Method::RecoverU) {
                    let mut run = || -> Result<MethodOutcome> {
                        let u_r = smoother_for_fit(&fit, data.coords())?.apply(&fit.residuals)?;
                        corr_u = Some(correlation(u, &u_r));
                        let (mut att, ps) =
                            recoveru_from_parts(data, fit.intercept, &fit.gamma_hat, &u_r, opts)?;
                        if let Some(b) = sc.bootstrap {
                            let spec = BootstrapSpec {
                                replicates: b,
                                seed: bootstrap_seed(sc.seed, index),
                                parallelism: 1,
                                mode: sc.bootstrap_mode,
                            };
                            let boot =
                                parametric_bootstrap(data, &fit, &ps, att.estimate, &spec, opts)?;
                            att = att.with_std_error(boot.std_error);
                        }
                        Ok(MethodOutcome {
                            method: Method::RecoverU,
                            att,
                            smd_u: weighted_smd(u, data, &ps.scores),
                        })
                    };
                    match run() {
                        Ok(r) => results.push(r),
                        Err(e) => failures.push((Method::RecoverU, e)),
                    }
                }
            }
            Err(e) => {
                for m in [Method::Gls, Method::RecoverU] {
                    if sc.wants(m) {
                        failures.push((m, e.clone()));
                    }
                }
            }
        }
    }

    if sc.wants(Method::Gold) {
        match gold_att(data, u, opts) {
            Ok((att, ps)) => results.push(MethodOutcome {
                method: Method::Gold,
                att,
                smd_u: weighted_smd(u, data, &ps.scores),
            }),
            Err(e) => failures.push((Method::Gold, e)),
        }
    }
    results.sort_by_key(|r| r.method);

    ReplicateOutcome {
        index,
        results,
        failures,
        corr_u,
        smd_u_unadjusted: smd(u, data.treatment(), None).ok(),
        treated_fraction: data.n_treated() as f64 / data.n() as f64,
    }
}

/// Summary of one method across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    pub successes: usize,
    pub mean_estimate: f64,
    /// Mean estimate minus the true effect.
    pub bias: f64,
    /// Empirical standard deviation of the estimates.
    pub sd: f64,
    /// Mean reported standard error (`NaN` if none were reported).
    pub mean_se: f64,
    /// Percent of intervals containing the true effect (`NaN` without
    /// standard errors).
    pub coverage: f64,
    /// Mean absolute weighted SMD of the true confounder (`NaN` for methods
    /// without a propensity model).
    pub mean_abs_smd_u: f64,
    /// Percent of replicates with weighted `|SMD(U)| <=` [`SMD_THRESHOLD`].
    pub pct_smd_u_balanced: f64,
}

/// Balance threshold used in the summaries.
pub const SMD_THRESHOLD: f64 = 0.2;

/// Largest tolerated share of failed replicates in a scenario.
pub const MAX_REPLICATE_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub scenario: Scenario,
    pub methods: Vec<MethodMetrics>,
    pub mean_corr_u: f64,
    pub mean_abs_smd_u_unadjusted: f64,
    pub mean_treated_fraction: f64,
    pub replicates: usize,
    /// Replicates on which at least one method failed.
    pub failed_replicates: usize,
}

impl ScenarioMetrics {
    pub fn get(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

/// Reduces replicate outcomes (in index order) to scenario metrics. Fails
/// when more than [`MAX_REPLICATE_FAILURE_RATE`] of the replicates failed.
pub fn summarize(sc: &Scenario, outcomes: &[ReplicateOutcome]) -> Result<ScenarioMetrics> {
    if outcomes.is_empty() {
        return Err(Error::MissingInput("no replicate outcomes".into()));
    }
    let mut ordered: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    ordered.sort_by_key(|o| o.index);
    let total = ordered.len();
    let failed = ordered.iter().filter(|o| o.failed()).count();
    if failed as f64 > MAX_REPLICATE_FAILURE_RATE * total as f64 {
        let first = ordered
            .iter()
            .find_map(|o| o.failures.first())
            .map(|(m, e)| format!("{m}: {e}"))
            .unwrap_or_default();
        return Err(Error::Fit(format!(
            "{failed} of {total} replicates failed (first failure: {first})"
        )));
    }

    let mut methods = Vec::new();
    let mut requested = sc.methods.clone();
    requested.sort();
    requested.dedup();
    for m in requested {
        let rs: Vec<&MethodOutcome> = ordered.iter().filter_map(|o| o.get(m)).collect();
        let est: Vec<f64> = rs.iter().map(|r| r.att.estimate).collect();
        let with_se: Vec<&&MethodOutcome> =
            rs.iter().filter(|r| r.att.std_error.is_finite()).collect();
        let ses: Vec<f64> = with_se.iter().map(|r| r.att.std_error).collect();
        let coverage = if with_se.is_empty() {
            f64::NAN
        } else {
            100.0 * with_se.iter().filter(|r| r.att.covers(TRUE_ATT)).count() as f64
                / with_se.len() as f64
        };
        let smds: Vec<f64> = rs.iter().filter_map(|r| r.smd_u).map(f64::abs).collect();
        let pct_bal = if smds.is_empty() {
            f64::NAN
        } else {
            100.0 * smds.iter().filter(|&&s| s <= SMD_THRESHOLD).count() as f64 / smds.len() as f64
        };
        let mean_estimate = mean(&est);
        methods.push(MethodMetrics {
            method: m,
            successes: rs.len(),
            mean_estimate,
            bias: mean_estimate - TRUE_ATT,
            sd: sample_sd(&est),
            mean_se: mean(&ses),
            coverage,
            mean_abs_smd_u: mean(&smds),
            pct_smd_u_balanced: pct_bal,
        });
    }
    let corr: Vec<f64> = ordered.iter().filter_map(|o| o.corr_u).collect();
    let unadj: Vec<f64> = ordered
        .iter()
        .filter_map(|o| o.smd_u_unadjusted)
        .map(f64::abs)
        .collect();
    let treated: Vec<f64> = ordered.iter().map(|o| o.treated_fraction).collect();
    Ok(ScenarioMetrics {
        scenario: sc.clone(),
        methods,
        mean_corr_u: mean(&corr),
        mean_abs_smd_u_unadjusted: mean(&unadj),
        mean_treated_fraction: mean(&treated),
        replicates: total,
        failed_replicates: failed,
    })
}

/// Runs every replicate of a scenario sequentially.
pub fn run_scenario(sc: &Scenario, opts: &EstimateOptions) -> Result<ScenarioMetrics> {
    let ctx = ScenarioContext::new(sc)?;
    let outcomes = (0..sc.replicates as u64)
        .map(|k| ctx.run_replicate(k, opts))
        .collect::<Result<Vec<_>>>()?;
    summarize(sc, &outcomes)
}

/// Coefficients of a wide synthetic design.
fn wide_coefficients(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut outcome = vec![0.0; p];
    let mut propensity = vec![0.0; p];
    for j in 0..p {
        if j < 4 {
            outcome[j] = OUTCOME_COEF[j];
            propensity[j] = PROPENSITY_COEF[j];
        } else {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            outcome[j] = sign * 0.3;
            propensity[j] = sign * 0.1;
        }
    }
    (outcome, propensity)
}

/// A data set shaped like an observational study with `p` covariates:
/// the first four follow the simulation design, and the rest alternate
/// between continuous and binary columns with small effects.
pub fn generate_wide(n: usize, p: usize, c: f64, nu: f64, seed: u64) -> Result<SimulatedData> {
    if p < 4 {
        return Err(Error::ParameterDomain(format!(
            "need at least 4 covariates, got {p}"
        )));
    }
    let sc = Scenario {
        c,
        nu,
        n,
        seed,
        replicates: 1,
        ..Scenario::default()
    };
    let ctx = ScenarioContext::new(&sc)?;
    let mut rng = replicate_rng(seed, 0);
    let u = ctx.u_field.sample(&mut rng);
    let (beta_y, beta_a) = wide_coefficients(p);
    let z = Matrix::from_fn(n, p, |_, j| {
        if j >= 4 && j % 3 == 0 {
            f64::from(u8::from(rng.random::<f64>() < 0.5))
        } else {
            StandardNormal.sample(&mut rng)
        }
    });
    let a = draw_treatment(&mut rng, &z, &u, &beta_a, c);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let mean = TRUE_ATT * a[i]
            + z.row(i)
                .iter()
                .zip(&beta_y)
                .map(|(x, b)| x * b)
                .sum::<f64>()
            + u[i];
        y.push(mean + libm::sqrt(NOISE_VARIANCE) * eps);
    }
    let names = (1..=p).map(|j| format!("Z{j}")).collect();
    let data = SpatialDataset::new(ctx.coords.clone(), y, a, z, names)?;
    Ok(SimulatedData {
        data,
        true_u: u,
        true_att: TRUE_ATT,
    })
}
