//! Flat `key = value` configuration with command-line overrides.
//!
//! One entry per line; `#` starts a comment line; values are taken verbatim
//! after trimming. Lists are comma separated. Flags override file entries
//! of the same key. Every malformed or unknown field is reported, all at
//! once, with its origin.
//!
//! | key | commands | meaning |
//! |-----|----------|---------|
//! | `input` | analyze, balance, recover | CSV data file |
//! | `x`, `y`, `treatment`, `outcome` | analyze, balance, recover | column names |
//! | `covariates` | analyze, balance, recover | covariate columns (default: all others) |
//! | `drop` | analyze, balance, recover | covariates removed from every fit |
//! | `sensitivity` | analyze | covariates to omit one at a time, each giving extra ATT rows |
//! | `true_u` | analyze, balance, recover | column with the true confounder (enables `gold`) |
//! | `jitter` | analyze, balance, recover | offset scale for duplicated locations (`0` rejects them) |
//! | `methods` | all but recover | subset of `naive,gls,gold,recoveru` |
//! | `bootstrap` | analyze, simulate | bootstrap replicates (`0` disables) |
//! | `bootstrap_mode` | analyze, simulate | `full` or `frozen` |
//! | `threshold` | analyze, balance | SMD flag threshold |
//! | `c`, `nu`, `regime` | simulate | scenario values (lists allowed; `regime = all`) |
//! | `full` | simulate | run the standard 3 × 4 grid of `c` and `nu` |
//! | `off_grid` | simulate | accept `c`/`nu` outside the standard grids |
//! | `reps`, `n`, `domain` | simulate | replicates, locations, window side |
//! | `out`, `seed`, `jobs` | all | output directory, master seed, worker threads |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use geocausal_core::bootstrap::BootstrapMode;
use geocausal_core::causal::Method;
use geocausal_core::simulation::{Regime, Scenario, C_GRID, NU_GRID};

use crate::error::{CliError, CliResult};
use crate::ingest::{ColumnMapping, DuplicatePolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File(line) => write!(f, "config line {line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub value: String,
    pub origin: Origin,
}

/// Raw key/value pairs after merging file and flags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    /// Parses config text. Lines without `=`, empty keys and repeated keys
    /// are errors.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((key, value)) = t.split_once('=') else {
                errors.push(format!(
                    "config line {line}: expected `key = value`, found {t:?}"
                ));
                continue;
            };
            let key = key.trim();
            if key.is_empty() {
                errors.push(format!("config line {line}: empty key"));
                continue;
            }
            let entry = Entry {
                value: value.trim().to_string(),
                origin: Origin::File(line),
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                errors.push(format!(
                    "config line {line}: key `{key}` already set at {}",
                    prev.origin
                ));
            }
        }
        if errors.is_empty() {
            Ok(KeyValues { entries })
        } else {
            Err(CliError::Validation(errors.join("\n")))
        }
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    /// Applies a flag value, replacing any file entry.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                origin: Origin::Flag,
            },
        );
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Typed access that collects every diagnostic instead of stopping.
struct Fields<'a> {
    kv: &'a KeyValues,
    errors: Vec<String>,
}

impl<'a> Fields<'a> {
    fn new(kv: &'a KeyValues, allowed: &[&str], command: &str) -> Self {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        let errors = kv
            .entries
            .iter()
            .filter(|(k, _)| !allowed.contains(k.as_str()))
            .map(|(k, e)| format!("{}: unknown key `{k}` for {command}", e.origin))
            .collect();
        Fields { kv, errors }
    }

    fn fail(&mut self, key: &str, msg: impl fmt::Display) {
        let origin = self
            .kv
            .get(key)
            .map(|e| e.origin.to_string())
            .unwrap_or_else(|| "config".into());
        self.errors.push(format!("{origin}: key `{key}`: {msg}"));
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.kv.get(key).map(|e| e.value.as_str())
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: T, what: &str) -> T {
        match self.raw(key) {
            None => default,
            Some(v) => match v.parse() {
                Ok(x) => x,
                Err(_) => {
                    self.fail(key, format!("cannot parse {v:?} as {what}"));
                    default
                }
            },
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.raw(key) {
            Some("") => {
                self.fail(key, "empty value");
                default.to_string()
            }
            Some(v) => v.to_string(),
            None => default.to_string(),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    fn flag(&mut self, key: &str) -> bool {
        match self.raw(key) {
            None => false,
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => true,
                "false" | "no" | "0" | "off" => false,
                _ => {
                    self.fail(key, format!("cannot parse {v:?} as a boolean"));
                    false
                }
            },
        }
    }

    fn methods(&mut self, default: &[Method]) -> Vec<Method> {
        let Some(items) = self.list("methods") else {
            return default.to_vec();
        };
        let mut out = Vec::new();
        for s in items {
            match s.parse::<Method>() {
                Ok(m) if !out.contains(&m) => out.push(m),
                Ok(m) => self.fail("methods", format!("method {m} listed twice")),
                Err(e) => self.fail("methods", e),
            }
        }
        if out.is_empty() {
            self.fail("methods", "no methods requested");
        }
        out
    }

    fn f64_list(&mut self, key: &str, default: &[f64], what: &str) -> Vec<f64> {
        let Some(items) = self.list(key) else {
            return default.to_vec();
        };
        let mut out = Vec::new();
        for s in items {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => self.fail(key, format!("cannot parse {s:?} as {what}")),
            }
        }
        if out.is_empty() {
            self.fail(key, "empty list");
        }
        out
    }

    fn bootstrap_mode(&mut self, default: BootstrapMode) -> BootstrapMode {
        match self.raw("bootstrap_mode") {
            None => default,
            Some("full") => BootstrapMode::FullRefit,
            Some("frozen") => BootstrapMode::FrozenCovariance,
            Some(v) => {
                self.fail(
                    "bootstrap_mode",
                    format!("unknown mode {v:?} (expected full or frozen)"),
                );
                default
            }
        }
    }

    fn jobs(&mut self) -> usize {
        let jobs = self.parse("jobs", 1usize, "a thread count");
        if jobs == 0 {
            self.fail("jobs", "must be at least 1");
        }
        jobs.max(1)
    }

    fn finish<T>(self, value: T) -> CliResult<T> {
        if self.errors.is_empty() {
            Ok(value)
        } else {
            Err(CliError::Validation(self.errors.join("\n")))
        }
    }
}

const DATA_KEYS: [&str; 12] = [
    "input",
    "x",
    "y",
    "treatment",
    "outcome",
    "covariates",
    "drop",
    "true_u",
    "jitter",
    "out",
    "seed",
    "jobs",
];

/// Settings shared by the commands that read a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub input: PathBuf,
    pub mapping: ColumnMapping,
    pub drop: Vec<String>,
    pub true_u: Option<String>,
    pub duplicates: DuplicatePolicy,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

fn data_config(f: &mut Fields<'_>) -> DataConfig {
    let input = match f.raw("input") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => {
            f.errors
                .push("key `input`: an input CSV is required".into());
            PathBuf::new()
        }
    };
    let defaults = ColumnMapping::default();
    let mapping = ColumnMapping {
        x: f.string("x", &defaults.x),
        y: f.string("y", &defaults.y),
        treatment: f.string("treatment", &defaults.treatment),
        outcome: f.string("outcome", &defaults.outcome),
        covariates: f.list("covariates").unwrap_or_default(),
    };
    if f.raw("covariates").is_some() && mapping.covariates.is_empty() {
        f.fail("covariates", "covariate list is empty");
    }
    let drop = f.list("drop").unwrap_or_default();
    if let Some(d) = drop.iter().find(|d| mapping.covariates.contains(d)) {
        f.fail("drop", format!("{d:?} is both listed and dropped"));
    }
    let true_u = f.raw("true_u").map(String::from);
    let seed = f.parse("seed", 1u64, "an unsigned integer");
    let jitter = f.parse("jitter", 0.0f64, "a number");
    let duplicates = if jitter > 0.0 && jitter.is_finite() {
        DuplicatePolicy::Jitter {
            scale: jitter,
            seed,
        }
    } else {
        if jitter != 0.0 {
            f.fail("jitter", "must be a non-negative number");
        }
        DuplicatePolicy::Reject
    };
    DataConfig {
        input,
        mapping,
        drop,
        true_u,
        duplicates,
        out: PathBuf::from(f.string("out", "geocausal-out")),
        seed,
        jobs: f.jobs(),
    }
}

fn threshold(f: &mut Fields<'_>) -> f64 {
    let t = f.parse("threshold", 0.2f64, "a number");
    if !(t > 0.0 && t.is_finite()) {
        f.fail("threshold", format!("{t} must be positive"));
    }
    t
}

/// Configuration of `analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub data: DataConfig,
    pub methods: Vec<Method>,
    /// Omitted one at a time, each producing another specification.
    pub sensitivity: Vec<String>,
    /// `None` disables the bootstrap.
    pub bootstrap: Option<usize>,
    pub bootstrap_mode: BootstrapMode,
    pub threshold: f64,
}

pub const DEFAULT_ANALYSIS_METHODS: [Method; 3] = [Method::Naive, Method::Gls, Method::RecoverU];

fn bootstrap_count(f: &mut Fields<'_>, default: usize) -> Option<usize> {
    match f.parse("bootstrap", default, "a replicate count") {
        0 => None,
        1 => {
            f.fail("bootstrap", "needs at least 2 replicates (0 disables)");
            None
        }
        b => Some(b),
    }
}

impl AnalysisConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        let mut allowed = DATA_KEYS.to_vec();
        allowed.extend([
            "methods",
            "sensitivity",
            "bootstrap",
            "bootstrap_mode",
            "threshold",
        ]);
        let mut f = Fields::new(kv, &allowed, "analyze");
        let data = data_config(&mut f);
        let methods = f.methods(&DEFAULT_ANALYSIS_METHODS);
        if methods.contains(&Method::Gold) && data.true_u.is_none() {
            f.fail(
                "methods",
                "gold needs the true confounder column (set `true_u`)",
            );
        }
        let sensitivity = f.list("sensitivity").unwrap_or_default();
        if let Some(s) = sensitivity.iter().find(|s| data.drop.contains(s)) {
            f.fail("sensitivity", format!("{s:?} is already dropped"));
        }
        let cfg = AnalysisConfig {
            methods,
            sensitivity,
            bootstrap: bootstrap_count(&mut f, 500),
            bootstrap_mode: f.bootstrap_mode(BootstrapMode::FullRefit),
            threshold: threshold(&mut f),
            data,
        };
        f.finish(cfg)
    }
}

/// Configuration of `balance`.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    pub data: DataConfig,
    pub methods: Vec<Method>,
    pub threshold: f64,
}

impl BalanceConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        let mut allowed = DATA_KEYS.to_vec();
        allowed.extend(["methods", "threshold"]);
        let mut f = Fields::new(kv, &allowed, "balance");
        let data = data_config(&mut f);
        let methods = f.methods(&[Method::Naive, Method::RecoverU]);
        if methods.contains(&Method::Gold) && data.true_u.is_none() {
            f.fail(
                "methods",
                "gold needs the true confounder column (set `true_u`)",
            );
        }
        if methods == [Method::Gls] {
            f.fail("methods", "gls has no propensity model to balance");
        }
        let cfg = BalanceConfig {
            methods,
            threshold: threshold(&mut f),
            data,
        };
        f.finish(cfg)
    }
}

/// Configuration of `recover`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverConfig {
    pub data: DataConfig,
}

impl RecoverConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        let mut f = Fields::new(kv, &DATA_KEYS, "recover");
        let data = data_config(&mut f);
        f.finish(RecoverConfig { data })
    }
}

/// Configuration of `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    /// In run order: regime, then `c`, then `ν`.
    pub scenarios: Vec<Scenario>,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub full: bool,
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.contains(&v)
}

fn fmt_grid(grid: &[f64]) -> String {
    grid.iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl SimulateConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        let allowed = [
            "c",
            "nu",
            "regime",
            "full",
            "off_grid",
            "reps",
            "n",
            "domain",
            "seed",
            "bootstrap",
            "bootstrap_mode",
            "methods",
            "out",
            "jobs",
        ];
        let mut f = Fields::new(kv, &allowed, "simulate");
        let template = Scenario::default();
        let full = f.flag("full");
        let off_grid = f.flag("off_grid");
        if full {
            for key in ["c", "nu"] {
                if f.raw(key).is_some() {
                    f.fail(
                        key,
                        "cannot be combined with `full`, which runs the whole grid",
                    );
                }
            }
        }
        let cs = if full {
            C_GRID.to_vec()
        } else {
            f.f64_list("c", &[template.c], "a confounding strength")
        };
        let nus = if full {
            NU_GRID.to_vec()
        } else {
            f.f64_list("nu", &[template.nu], "a smoothness")
        };
        if !off_grid {
            for &c in cs.iter().filter(|c| !on_grid(**c, &C_GRID)) {
                f.fail(
                    "c",
                    format!(
                        "{c} is not in the grid {{{}}} (set off_grid to allow)",
                        fmt_grid(&C_GRID)
                    ),
                );
            }
            for &nu in nus.iter().filter(|v| !on_grid(**v, &NU_GRID)) {
                f.fail(
                    "nu",
                    format!(
                        "{nu} is not in the grid {{{}}} (set off_grid to allow)",
                        fmt_grid(&NU_GRID)
                    ),
                );
            }
        }
        for &c in cs.iter().filter(|c| **c < 0.0) {
            f.fail("c", format!("{c} must be non-negative"));
        }
        for &nu in nus.iter().filter(|v| **v <= 0.0) {
            f.fail("nu", format!("{nu} must be positive"));
        }
        let regimes = match f.list("regime") {
            None => vec![template.regime],
            Some(items) if items.len() == 1 && items[0] == "all" => Regime::ALL.to_vec(),
            Some(items) => {
                let mut out = Vec::new();
                for s in items {
                    match s.parse::<Regime>() {
                        Ok(r) if !out.contains(&r) => out.push(r),
                        Ok(r) => f.fail("regime", format!("regime {r} listed twice")),
                        Err(e) => f.fail("regime", e),
                    }
                }
                if out.is_empty() {
                    f.fail("regime", "empty list");
                }
                out
            }
        };
        let reps = f.parse("reps", 100usize, "a replicate count");
        if reps == 0 {
            f.fail("reps", "must be at least 1");
        }
        let n = f.parse("n", template.n, "a location count");
        if n < 10 {
            f.fail("n", format!("{n} is too small (need at least 10)"));
        }
        let domain = f.parse("domain", template.domain, "a number");
        if !(domain > 0.0 && domain.is_finite()) {
            f.fail("domain", format!("{domain} must be positive"));
        }
        let seed = f.parse("seed", 1u64, "an unsigned integer");
        let bootstrap = bootstrap_count(&mut f, 0);
        let bootstrap_mode = f.bootstrap_mode(BootstrapMode::FrozenCovariance);
        let methods = f.methods(&Method::ALL);
        let out = PathBuf::from(f.string("out", "geocausal-out"));
        let jobs = f.jobs();

        let mut scenarios = Vec::new();
        for &regime in &regimes {
            for &c in &cs {
                for &nu in &nus {
                    scenarios.push(Scenario {
                        c,
                        nu,
                        regime,
                        n,
                        replicates: reps,
                        seed,
                        domain,
                        bootstrap,
                        bootstrap_mode,
                        methods: methods.clone(),
                    });
                }
            }
        }
        f.finish(SimulateConfig {
            scenarios,
            out,
            seed,
            jobs,
            full,
        })
    }
}
