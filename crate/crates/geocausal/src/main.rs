use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geocausal::commands::{self, GenerateConfig, Outcome};
use geocausal::config::{AnalysisConfig, BalanceConfig, KeyValues, RecoverConfig, SimulateConfig};
use geocausal::CliResult;

/// Spatial confounder recovery and doubly robust treatment effects.
///
/// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
/// failure (including partial results), 3 I/O error.
#[derive(Parser)]
#[command(name = "geocausal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation scenarios and write bias / SD / coverage tables.
    Simulate(SimulateArgs),
    /// Estimate the ATT on a CSV data set with every requested method.
    Analyze(AnalyzeArgs),
    /// Write the covariate balance table only.
    Balance(BalanceArgs),
    /// Append the recovered confounder to the data as a CSV column.
    Recover(DataArgs),
    /// Write a synthetic data set with its true confounder.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    y: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated covariate columns (default: all remaining).
    #[arg(long)]
    covariates: Option<String>,
    /// Comma-separated covariates to leave out.
    #[arg(long)]
    drop: Option<String>,
    /// Column holding the true confounder, if known.
    #[arg(long = "true-u")]
    true_u: Option<String>,
    /// Offset scale used to separate duplicated locations.
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated subset of naive,gls,gold,recoveru.
    #[arg(long)]
    methods: Option<String>,
    /// Bootstrap replicates for the recovery estimator (0 disables).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// `full` or `frozen`.
    #[arg(long = "bootstrap-mode")]
    bootstrap_mode: Option<String>,
    /// SMD flag threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated covariates to omit one at a time.
    #[arg(long)]
    sensitivity: Option<String>,
}

#[derive(Args)]
struct BalanceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Confounding strength(s), comma separated.
    #[arg(long)]
    c: Option<String>,
    /// Smoothness value(s), comma separated.
    #[arg(long)]
    nu: Option<String>,
    /// Regime name(s), comma separated, or `all`.
    #[arg(long)]
    regime: Option<String>,
    /// Run the standard 3 x 4 grid of c and nu.
    #[arg(long)]
    full: bool,
    /// Accept c and nu values outside the standard grids.
    #[arg(long = "off-grid")]
    off_grid: bool,
    #[arg(long)]
    reps: Option<usize>,
    /// Number of locations.
    #[arg(long)]
    n: Option<usize>,
    /// Side length of the square sampling window.
    #[arg(long)]
    domain: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long = "bootstrap-mode")]
    bootstrap_mode: Option<String>,
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 473)]
    n: usize,
    /// Number of covariates.
    #[arg(long, default_value_t = 18)]
    p: usize,
    #[arg(long, default_value_t = 1.5)]
    c: f64,
    #[arg(long, default_value_t = 1.5)]
    nu: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn set<T: ToString>(kv: &mut KeyValues, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        kv.set(key, v.to_string());
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn common_kv(c: &Common) -> CliResult<KeyValues> {
    let mut kv = match &c.config {
        Some(path) => KeyValues::from_file(path)?,
        None => KeyValues::default(),
    };
    set(&mut kv, "seed", &c.seed);
    set(&mut kv, "out", &path_str(&c.out));
    set(&mut kv, "jobs", &c.jobs);
    Ok(kv)
}

fn data_kv(d: &DataArgs) -> CliResult<KeyValues> {
    let mut kv = common_kv(&d.common)?;
    set(&mut kv, "input", &path_str(&d.input));
    set(&mut kv, "x", &d.x);
    set(&mut kv, "y", &d.y);
    set(&mut kv, "treatment", &d.treatment);
    set(&mut kv, "outcome", &d.outcome);
    set(&mut kv, "covariates", &d.covariates);
    set(&mut kv, "drop", &d.drop);
    set(&mut kv, "true_u", &d.true_u);
    set(&mut kv, "jitter", &d.jitter);
    Ok(kv)
}

fn run(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::Simulate(a) => {
            let mut kv = common_kv(&a.common)?;
            set(&mut kv, "c", &a.c);
            set(&mut kv, "nu", &a.nu);
            set(&mut kv, "regime", &a.regime);
            if a.full {
                kv.set("full", "true");
            }
            if a.off_grid {
                kv.set("off_grid", "true");
            }
            set(&mut kv, "reps", &a.reps);
            set(&mut kv, "n", &a.n);
            set(&mut kv, "domain", &a.domain);
            set(&mut kv, "bootstrap", &a.bootstrap);
            set(&mut kv, "bootstrap_mode", &a.bootstrap_mode);
            set(&mut kv, "methods", &a.methods);
            commands::cmd_simulate(&SimulateConfig::from_key_values(&kv)?)
        }
        Command::Analyze(a) => {
            let mut kv = data_kv(&a.data)?;
            set(&mut kv, "methods", &a.methods);
            set(&mut kv, "bootstrap", &a.bootstrap);
            set(&mut kv, "bootstrap_mode", &a.bootstrap_mode);
            set(&mut kv, "threshold", &a.threshold);
            set(&mut kv, "sensitivity", &a.sensitivity);
            commands::cmd_analyze(&AnalysisConfig::from_key_values(&kv)?)
        }
        Command::Balance(a) => {
            let mut kv = data_kv(&a.data)?;
            set(&mut kv, "methods", &a.methods);
            set(&mut kv, "threshold", &a.threshold);
            commands::cmd_balance(&BalanceConfig::from_key_values(&kv)?)
        }
        Command::Recover(d) => {
            commands::cmd_recover(&RecoverConfig::from_key_values(&data_kv(&d)?)?)
        }
        Command::Generate(g) => commands::cmd_generate(&GenerateConfig {
            n: g.n,
            p: g.p,
            c: g.c,
            nu: g.nu,
            seed: g.seed,
            out: g.out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            for fail in &out.failures {
                eprintln!("failed: {fail}");
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
