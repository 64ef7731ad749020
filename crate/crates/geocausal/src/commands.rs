//! The `simulate`, `analyze`, `balance`, `recover` and `generate` commands.
//!
//! Each command writes its files into the configured output directory and
//! returns what it wrote. Failures of individual methods or scenarios do
//! not stop the run: the remaining results are written and the failures
//! are listed in the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geocausal_core::bootstrap::{BootstrapMode, BootstrapSpec};
use geocausal_core::causal::{
    balance_table, gls_att, gold_att, naive_att, run_recoveru, AttResult, BalanceTable,
    EstimateOptions, Method, PropensityFit, RECOVERED_LABEL,
};
use geocausal_core::recovery::recover_u;
use geocausal_core::simulation::{correlation, generate_wide};
use geocausal_core::spatial_model::{fit_outcome_model, SpatialDataset};
use serde_json::{json, Value};

use crate::config::{AnalysisConfig, BalanceConfig, DataConfig, RecoverConfig, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{read_dataset_file, write_dataset_file, ColumnMapping};
use crate::parallel;
use crate::report::{self, AttRow};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files written by a command, and anything that went wrong on the way.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Failures that left the output incomplete.
    pub failures: Vec<String>,
}

impl Outcome {
    /// Exit status: `0` when complete, `2` when partial.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn versions() -> Value {
    json!({ "geocausal": VERSION, "geocausal-core": VERSION })
}

fn mode_str(mode: BootstrapMode) -> &'static str {
    match mode {
        BootstrapMode::FullRefit => "full",
        BootstrapMode::FrozenCovariance => "frozen",
    }
}

struct Loaded {
    data: SpatialDataset,
    true_u: Option<Vec<f64>>,
    warnings: Vec<String>,
}

fn load(cfg: &DataConfig) -> CliResult<Loaded> {
    let extra: Vec<&str> = cfg.true_u.iter().map(String::as_str).collect();
    let got = read_dataset_file(&cfg.input, &cfg.mapping, &extra, cfg.duplicates)?;
    let mut data = got.data;
    for name in &cfg.drop {
        data = data
            .drop_covariate(name)
            .map_err(|e| CliError::Validation(format!("drop: {e}")))?;
    }
    let true_u = got.extra.into_iter().next().map(|(_, v)| v);
    Ok(Loaded {
        data,
        true_u,
        warnings: got.warnings,
    })
}

fn data_json(cfg: &DataConfig, data: &SpatialDataset) -> Value {
    json!({
        "input": cfg.input.display().to_string(),
        "x": cfg.mapping.x,
        "y": cfg.mapping.y,
        "treatment": cfg.mapping.treatment,
        "outcome": cfg.mapping.outcome,
        "covariates": data.names(),
        "dropped": cfg.drop,
        "true_u": cfg.true_u,
        "n": data.n(),
        "n_treated": data.n_treated(),
        "n_control": data.n_control(),
    })
}

fn specification_label(dropped: &[&str]) -> String {
    if dropped.is_empty() {
        "all".into()
    } else {
        format!("without {}", dropped.join(","))
    }
}

/// Propensity fits by method label, for the balance table.
type Fits = Vec<(Method, PropensityFit)>;

fn balance_from_fits(
    data: &SpatialDataset,
    fits: &Fits,
    extra: &[(&str, &[f64])],
    threshold: f64,
) -> CliResult<BalanceTable> {
    let labelled: Vec<(&str, &PropensityFit)> =
        fits.iter().map(|(m, ps)| (m.as_str(), ps)).collect();
    Ok(balance_table(data, &labelled, extra, threshold)?)
}

struct SpecResult {
    rows: Vec<AttRow>,
    fits: Fits,
    recovered: Option<Vec<f64>>,
    details: Vec<Value>,
}

fn run_specification(
    pool: &rayon::ThreadPool,
    label: &str,
    data: &SpatialDataset,
    true_u: Option<&[f64]>,
    cfg: &AnalysisConfig,
    opts: &EstimateOptions,
    failures: &mut Vec<String>,
) -> SpecResult {
    let mut out = SpecResult {
        rows: Vec::new(),
        fits: Vec::new(),
        recovered: None,
        details: Vec::new(),
    };
    let push = |out: &mut SpecResult, att: AttResult| {
        out.rows.push(AttRow {
            specification: label.to_string(),
            result: att,
        })
    };
    for &method in &cfg.methods {
        let result: CliResult<()> = (|| {
            match method {
                Method::Naive => {
                    let (att, ps) = naive_att(data, opts)?;
                    push(&mut out, att);
                    out.fits.push((method, ps));
                }
                Method::Gls => {
                    let (att, fit) = gls_att(data, opts)?;
                    push(&mut out, att);
                    out.details.push(json!({
                        "method": "gls",
                        "matern": matern_json(&fit.matern),
                        "converged": fit.converged,
                        "iterations": fit.iterations,
                    }));
                }
                Method::Gold => {
                    let u = true_u.ok_or_else(|| {
                        CliError::Validation("gold needs the true confounder".into())
                    })?;
                    let (att, ps) = gold_att(data, u, opts)?;
                    push(&mut out, att);
                    out.fits.push((method, ps));
                }
                Method::RecoverU => {
                    let run = run_recoveru(data, opts)?;
                    let mut att = run.att;
                    let mut boot_json = Value::Null;
                    if let Some(b) = cfg.bootstrap {
                        let spec = BootstrapSpec {
                            replicates: b,
                            seed: cfg.data.seed,
                            parallelism: cfg.data.jobs,
                            mode: cfg.bootstrap_mode,
                        };
                        match parallel::parametric_bootstrap(
                            pool,
                            data,
                            &run.outcome,
                            &run.propensity,
                            att.estimate,
                            &spec,
                            opts,
                        ) {
                            Ok(boot) => {
                                att = att.with_std_error(boot.std_error);
                                boot_json = json!({
                                    "replicates": b,
                                    "failed": boot.failed,
                                    "mode": mode_str(cfg.bootstrap_mode),
                                    "seed": cfg.data.seed,
                                });
                            }
                            Err(e) => failures.push(format!("{label} / recoveru bootstrap: {e}")),
                        }
                    }
                    push(&mut out, att);
                    out.details.push(json!({
                        "method": "recoveru",
                        "matern": matern_json(&run.outcome.matern),
                        "converged": run.outcome.converged,
                        "iterations": run.outcome.iterations,
                        "alpha_hat": run.propensity.alpha_hat.map(report::num),
                        "smoother_trace": report::num(run.recovered.smoother_trace),
                        "bootstrap": boot_json,
                    }));
                    out.recovered = Some(run.recovered.u_r_hat);
                    out.fits.push((method, run.propensity));
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            failures.push(format!("{label} / {method}: {e}"));
        }
    }
    out
}

fn matern_json(p: &geocausal_core::geo_field::MaternParams) -> Value {
    json!({
        "sigma2": report::num(p.sigma2),
        "theta": report::num(p.theta),
        "nu": report::num(p.nu),
        "nugget": report::num(p.nugget),
    })
}

/// Writes `<stem>.csv`, `<stem>.txt` and pushes them onto `files`.
fn write_pair(
    dir: &Path,
    stem: &str,
    csv: &str,
    text: &str,
    files: &mut Vec<PathBuf>,
) -> CliResult<()> {
    files.push(report::write_file(&dir.join(format!("{stem}.csv")), csv)?);
    files.push(report::write_file(&dir.join(format!("{stem}.txt")), text)?);
    Ok(())
}

/// Full analysis: ATT table for every method and specification, balance
/// table for the base specification, metadata and manifest.
pub fn cmd_analyze(cfg: &AnalysisConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let loaded = load(&cfg.data)?;
    let data = &loaded.data;
    for s in &cfg.sensitivity {
        if !data.names().iter().any(|n| n == s) {
            return Err(CliError::Validation(format!(
                "sensitivity: covariate {s:?} not in dataset"
            )));
        }
    }
    ensure_dir(&cfg.data.out)?;
    let pool = parallel::thread_pool(cfg.data.jobs)?;
    let opts = EstimateOptions::default();
    let mut out = Outcome {
        warnings: loaded.warnings.clone(),
        ..Outcome::default()
    };
    let true_u = loaded.true_u.as_deref();
    let base_drops: Vec<&str> = cfg.data.drop.iter().map(String::as_str).collect();

    let base = run_specification(
        &pool,
        &specification_label(&base_drops),
        data,
        true_u,
        cfg,
        &opts,
        &mut out.failures,
    );
    let mut rows = base.rows.clone();
    let mut details =
        vec![json!({ "specification": specification_label(&base_drops), "fits": base.details })];
    for s in &cfg.sensitivity {
        let mut drops = base_drops.clone();
        drops.push(s);
        let label = specification_label(&drops);
        let reduced = data.drop_covariate(s)?;
        let r = run_specification(
            &pool,
            &label,
            &reduced,
            true_u,
            cfg,
            &opts,
            &mut out.failures,
        );
        rows.extend(r.rows);
        details.push(json!({ "specification": label, "fits": r.details }));
    }

    let dir = &cfg.data.out;
    write_pair(
        dir,
        "att",
        &report::att_csv(&rows)?,
        &report::att_text(&rows),
        &mut out.files,
    )?;

    let mut balance_meta = Value::Null;
    if base.fits.is_empty() {
        out.warnings
            .push("no propensity model was fitted; balance table skipped".into());
    } else {
        let mut extra: Vec<(&str, &[f64])> = Vec::new();
        if let Some(u_r) = &base.recovered {
            extra.push((RECOVERED_LABEL, u_r));
        }
        if let (Some(name), Some(u)) = (&cfg.data.true_u, true_u) {
            extra.push((name, u));
        }
        match balance_from_fits(data, &base.fits, &extra, cfg.threshold) {
            Ok(t) => {
                write_pair(
                    dir,
                    "balance",
                    &report::balance_csv(&t)?,
                    &report::balance_text(&t),
                    &mut out.files,
                )?;
                balance_meta = report::balance_json(&t);
            }
            Err(e) => out.failures.push(format!("balance table: {e}")),
        }
    }

    let metadata = json!({
        "command": "analyze",
        "seed": cfg.data.seed,
        "data": data_json(&cfg.data, data),
        "methods": cfg.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "sensitivity": cfg.sensitivity,
        "bootstrap": cfg.bootstrap.map(|b| json!({ "replicates": b, "mode": mode_str(cfg.bootstrap_mode) })),
        "threshold": cfg.threshold,
        "balance": balance_meta,
        "fits": details,
        "failures": { "count": out.failures.len(), "messages": out.failures },
        "warnings": out.warnings,
    });
    out.files
        .push(report::write_json(&dir.join("metadata.json"), &metadata)?);
    write_manifest(
        dir,
        "analyze",
        start,
        cfg.data.jobs,
        json!([cfg.data.seed]),
        &mut out,
    )?;
    Ok(out)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    start: Instant,
    jobs: usize,
    seeds: Value,
    out: &mut Outcome,
) -> CliResult<()> {
    let path = dir.join("manifest.json");
    let mut files: Vec<String> = out.files.iter().map(|p| p.display().to_string()).collect();
    files.push(path.display().to_string());
    let manifest = json!({
        "command": command,
        "versions": versions(),
        "seeds": seeds,
        "jobs": jobs,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "files": files,
        "complete": out.failures.is_empty(),
        "failures": out.failures,
    });
    out.files.push(report::write_json(&path, &manifest)?);
    Ok(())
}

/// Balance table only.
pub fn cmd_balance(cfg: &BalanceConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let loaded = load(&cfg.data)?;
    let data = &loaded.data;
    ensure_dir(&cfg.data.out)?;
    let opts = EstimateOptions::default();
    let mut fits: Fits = Vec::new();
    let mut extra_owned: Vec<(String, Vec<f64>)> = Vec::new();
    for &m in &cfg.methods {
        match m {
            Method::Naive => fits.push((m, naive_att(data, &opts)?.1)),
            Method::Gold => {
                let u = loaded
                    .true_u
                    .as_deref()
                    .ok_or_else(|| CliError::Validation("gold needs true_u".into()))?;
                fits.push((m, gold_att(data, u, &opts)?.1));
            }
            Method::RecoverU => {
                let run = run_recoveru(data, &opts)?;
                extra_owned.push((RECOVERED_LABEL.into(), run.recovered.u_r_hat));
                fits.push((m, run.propensity));
            }
            Method::Gls => {}
        }
    }
    if let (Some(name), Some(u)) = (&cfg.data.true_u, &loaded.true_u) {
        extra_owned.push((name.clone(), u.clone()));
    }
    let extra: Vec<(&str, &[f64])> = extra_owned
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    let table = balance_from_fits(data, &fits, &extra, cfg.threshold)?;
    let mut out = Outcome {
        warnings: loaded.warnings,
        ..Outcome::default()
    };
    let dir = &cfg.data.out;
    write_pair(
        dir,
        "balance",
        &report::balance_csv(&table)?,
        &report::balance_text(&table),
        &mut out.files,
    )?;
    let metadata = json!({
        "command": "balance",
        "seed": cfg.data.seed,
        "data": data_json(&cfg.data, data),
        "balance": report::balance_json(&table),
        "warnings": out.warnings,
    });
    out.files
        .push(report::write_json(&dir.join("metadata.json"), &metadata)?);
    write_manifest(
        dir,
        "balance",
        start,
        cfg.data.jobs,
        json!([cfg.data.seed]),
        &mut out,
    )?;
    Ok(out)
}

/// Writes the input data with the recovered confounder appended as a
/// `U_R` column, plus the fitted covariance parameters.
pub fn cmd_recover(cfg: &RecoverConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    let loaded = load(&cfg.data)?;
    let data = &loaded.data;
    ensure_dir(&cfg.data.out)?;
    let fit = fit_outcome_model(data, &EstimateOptions::default().irwls)?;
    let rec = recover_u(&fit, data.coords())?;
    let mut extra: Vec<(&str, &[f64])> = Vec::new();
    if let (Some(name), Some(u)) = (&cfg.data.true_u, &loaded.true_u) {
        extra.push((name, u));
    }
    extra.push((RECOVERED_LABEL, &rec.u_r_hat));
    let mut out = Outcome {
        warnings: loaded.warnings,
        ..Outcome::default()
    };
    let dir = &cfg.data.out;
    let csv_path = dir.join("recovered.csv");
    write_dataset_file(&csv_path, data, &cfg.data.mapping, &extra)?;
    out.files.push(csv_path);
    let metadata = json!({
        "command": "recover",
        "data": data_json(&cfg.data, data),
        "matern": matern_json(&fit.matern),
        "beta_hat": report::num(fit.beta_hat),
        "intercept": report::num(fit.intercept),
        "gamma_hat": fit.gamma_hat.iter().map(|g| report::num(*g)).collect::<Vec<_>>(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "smoother_trace": report::num(rec.smoother_trace),
        "corr_true_u": loaded.true_u.as_deref().map(|u| report::num(correlation(u, &rec.u_r_hat))),
        "warnings": out.warnings,
    });
    out.files
        .push(report::write_json(&dir.join("metadata.json"), &metadata)?);
    write_manifest(
        dir,
        "recover",
        start,
        cfg.data.jobs,
        json!([cfg.data.seed]),
        &mut out,
    )?;
    Ok(out)
}

/// Runs every configured scenario and writes the metrics tables.
pub fn cmd_simulate(cfg: &SimulateConfig) -> CliResult<Outcome> {
    let start = Instant::now();
    ensure_dir(&cfg.out)?;
    let pool = parallel::thread_pool(cfg.jobs)?;
    let opts = EstimateOptions::default();
    let mut out = Outcome::default();
    let mut metrics = Vec::new();
    let mut scenario_meta = Vec::new();
    for sc in &cfg.scenarios {
        let mut entry = report::scenario_json(sc);
        match parallel::run_scenario(&pool, sc, &opts) {
            Ok(m) => {
                entry["failed_replicates"] = json!(m.failed_replicates);
                entry["status"] = json!("ok");
                metrics.push(m);
            }
            Err(e) => {
                let msg = format!("{} c={} nu={}: {e}", sc.regime, sc.c, sc.nu);
                entry["status"] = json!("failed");
                entry["error"] = json!(e.to_string());
                out.failures.push(msg);
            }
        }
        scenario_meta.push(entry);
    }
    if !metrics.is_empty() {
        write_pair(
            &cfg.out,
            "metrics",
            &report::metrics_csv(&metrics)?,
            &report::metrics_text(&metrics)?,
            &mut out.files,
        )?;
    }
    let metadata = json!({
        "command": "simulate",
        "seed": cfg.seed,
        "full": cfg.full,
        "scenarios": scenario_meta,
        "failures": { "count": out.failures.len(), "messages": out.failures },
    });
    out.files.push(report::write_json(
        &cfg.out.join("metadata.json"),
        &metadata,
    )?);
    let seeds: Vec<u64> = cfg.scenarios.iter().map(|s| s.seed).collect();
    write_manifest(
        &cfg.out,
        "simulate",
        start,
        cfg.jobs,
        json!(seeds),
        &mut out,
    )?;
    if metrics.is_empty() {
        return Err(CliError::Numerical(format!(
            "every scenario failed; see {}",
            cfg.out.join("manifest.json").display()
        )));
    }
    Ok(out)
}

/// Options of `generate`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub nu: f64,
    pub seed: u64,
    /// Output CSV path.
    pub out: PathBuf,
}

/// Name of the true-confounder column written by `generate`.
pub const TRUE_U_COLUMN: &str = "U";

/// Writes a synthetic data set with `p` covariates and its true confounder.
pub fn cmd_generate(cfg: &GenerateConfig) -> CliResult<Outcome> {
    let mut errors = Vec::new();
    if cfg.n < 10 {
        errors.push(format!("n: {} is too small (need at least 10)", cfg.n));
    }
    if cfg.p < 4 {
        errors.push(format!("p: need at least 4 covariates, got {}", cfg.p));
    }
    if !cfg.c.is_finite() {
        errors.push(format!("c: {} is not finite", cfg.c));
    }
    if !(cfg.nu > 0.0 && cfg.nu.is_finite()) {
        errors.push(format!("nu: {} must be positive", cfg.nu));
    }
    if !errors.is_empty() {
        return Err(CliError::Validation(errors.join("\n")));
    }
    let sim = generate_wide(cfg.n, cfg.p, cfg.c, cfg.nu, cfg.seed)?;
    if let Some(parent) = cfg.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_dataset_file(
        &cfg.out,
        &sim.data,
        &ColumnMapping::default(),
        &[(TRUE_U_COLUMN, &sim.true_u)],
    )?;
    Ok(Outcome {
        files: vec![cfg.out.clone()],
        ..Outcome::default()
    })
}
