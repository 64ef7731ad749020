//! Report tables: CSV for machines, aligned text for people, JSON for
//! metadata.
//!
//! Numbers in CSV use the shortest form that parses back to the same
//! `f64` (`NaN` included), so the ATT and balance tables can be read back
//! exactly. JSON writes non-finite numbers as `null`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use geocausal_core::causal::{AttResult, BalanceRow, BalanceTable, Method, VariableKind};
use geocausal_core::simulation::ScenarioMetrics;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub fn write_file(path: &Path, contents: &str) -> CliResult<PathBuf> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

/// JSON number, `null` when not finite.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// Columns padded to a common width; the first column is left-aligned,
/// the rest right-aligned.
pub fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut s = String::new();
        for (j, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if j == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule);
    for r in rows {
        line(r);
    }
    out
}

fn fixed(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "-".into()
    }
}

fn parse_f64(s: &str, row: usize, column: &str) -> CliResult<f64> {
    s.trim().parse().map_err(|_| {
        CliError::Validation(format!(
            "row {row}: cannot parse {s:?} in column {column:?}"
        ))
    })
}

fn parse_usize(s: &str, row: usize, column: &str) -> CliResult<usize> {
    s.trim().parse().map_err(|_| {
        CliError::Validation(format!(
            "row {row}: cannot parse {s:?} in column {column:?}"
        ))
    })
}

fn read_records(text: &str) -> CliResult<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("cannot read header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let records = rdr
        .records()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| CliError::Validation(format!("row {}: {e}", k + 1))))
        .collect::<CliResult<_>>()?;
    Ok((header, records))
}

// ---------------------------------------------------------------- ATT table

/// One line of the ATT table: the covariate specification it was fitted
/// under and the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AttRow {
    pub specification: String,
    pub result: AttResult,
}

pub const ATT_COLUMNS: [&str; 8] = [
    "specification",
    "method",
    "estimate",
    "std_error",
    "lower",
    "upper",
    "n_treated",
    "n_control",
];

fn att_header() -> Vec<String> {
    ATT_COLUMNS.iter().map(|s| s.to_string()).collect()
}

pub fn att_csv(rows: &[AttRow]) -> CliResult<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let a = &r.result;
            vec![
                r.specification.clone(),
                a.method.to_string(),
                a.estimate.to_string(),
                a.std_error.to_string(),
                a.ci.0.to_string(),
                a.ci.1.to_string(),
                a.n_treated.to_string(),
                a.n_control.to_string(),
            ]
        })
        .collect();
    csv_string(&att_header(), &body)
}

pub fn parse_att_csv(text: &str) -> CliResult<Vec<AttRow>> {
    let (header, records) = read_records(text)?;
    if header != att_header() {
        return Err(CliError::Validation(format!(
            "ATT table header {} does not match {}",
            header.join(","),
            ATT_COLUMNS.join(",")
        )));
    }
    records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let row = k + 1;
            let method: Method = r[1]
                .parse()
                .map_err(|e| CliError::Validation(format!("row {row}: {e}")))?;
            Ok(AttRow {
                specification: r[0].to_string(),
                result: AttResult {
                    method,
                    estimate: parse_f64(&r[2], row, "estimate")?,
                    std_error: parse_f64(&r[3], row, "std_error")?,
                    ci: (
                        parse_f64(&r[4], row, "lower")?,
                        parse_f64(&r[5], row, "upper")?,
                    ),
                    n_treated: parse_usize(&r[6], row, "n_treated")?,
                    n_control: parse_usize(&r[7], row, "n_control")?,
                },
            })
        })
        .collect()
}

pub fn att_text(rows: &[AttRow]) -> String {
    let header: Vec<String> = [
        "specification",
        "method",
        "estimate",
        "se",
        "95% CI",
        "treated",
        "control",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let a = &r.result;
            let ci = if a.std_error.is_finite() {
                format!("({}, {})", fixed(a.ci.0, 3), fixed(a.ci.1, 3))
            } else {
                "-".into()
            };
            vec![
                r.specification.clone(),
                a.method.to_string(),
                fixed(a.estimate, 3),
                fixed(a.std_error, 3),
                ci,
                a.n_treated.to_string(),
                a.n_control.to_string(),
            ]
        })
        .collect();
    aligned(&header, &body)
}

// ------------------------------------------------------------ balance table

fn balance_header(t: &BalanceTable) -> Vec<String> {
    let mut h = vec!["variable".to_string(), "type".into(), "full_data".into()];
    h.extend(t.methods.iter().cloned());
    h
}

pub fn balance_csv(t: &BalanceTable) -> CliResult<String> {
    let body: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.variable.clone(),
                r.kind.as_str().to_string(),
                r.unadjusted.to_string(),
            ];
            cells.extend(r.adjusted.iter().map(f64::to_string));
            cells
        })
        .collect();
    csv_string(&balance_header(t), &body)
}

/// Reads a balance table back. The threshold is not part of the CSV; it
/// is recorded in the metadata sidecar.
pub fn parse_balance_csv(text: &str, threshold: f64) -> CliResult<BalanceTable> {
    let (header, records) = read_records(text)?;
    if header.len() < 3 || header[..3] != ["variable", "type", "full_data"] {
        return Err(CliError::Validation(format!(
            "balance table header {} must start with variable,type,full_data",
            header.join(",")
        )));
    }
    let methods = header[3..].to_vec();
    let rows = records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let row = k + 1;
            let kind = match &r[1] {
                "binary" => VariableKind::Binary,
                "continuous" => VariableKind::Continuous,
                other => {
                    return Err(CliError::Validation(format!(
                        "row {row}: unknown variable type {other:?}"
                    )))
                }
            };
            let adjusted = (3..header.len())
                .map(|j| parse_f64(&r[j], row, &header[j]))
                .collect::<CliResult<_>>()?;
            Ok(BalanceRow {
                variable: r[0].to_string(),
                kind,
                unadjusted: parse_f64(&r[2], row, "full_data")?,
                adjusted,
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(BalanceTable {
        methods,
        rows,
        threshold,
    })
}

/// Aligned balance table; values beyond the threshold carry a `*`.
pub fn balance_text(t: &BalanceTable) -> String {
    let mut header = vec!["variable".to_string(), "type".into(), "full data".into()];
    header.extend(t.methods.iter().cloned());
    let mark = |v: f64| {
        let s = fixed(v, 3);
        if t.exceeds(v) {
            s + "*"
        } else {
            s + " "
        }
    };
    let body: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.variable.clone(),
                r.kind.as_str().to_string(),
                mark(r.unadjusted),
            ];
            cells.extend(r.adjusted.iter().map(|v| mark(*v)));
            cells
        })
        .collect();
    let mut out = aligned(&header, &body);
    let _ = writeln!(out, "* |SMD| > {}", t.threshold);
    out
}

pub fn balance_json(t: &BalanceTable) -> Value {
    json!({
        "threshold": t.threshold,
        "methods": t.methods,
        "flagged": t.flagged().iter().map(|(v, m)| json!({
            "variable": v,
            "column": m.unwrap_or("full_data"),
        })).collect::<Vec<_>>(),
    })
}

// ------------------------------------------------------------ metrics table

const METHOD_METRICS: [&str; 8] = [
    "successes",
    "mean_estimate",
    "bias",
    "sd",
    "mean_se",
    "coverage",
    "mean_abs_smd_u",
    "pct_smd_u_balanced",
];

fn metric_methods(metrics: &[ScenarioMetrics]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| metrics.iter().any(|s| s.get(*m).is_some()))
        .collect()
}

/// One row per scenario; method metrics are spread across
/// `<method>_<metric>` columns.
pub fn metrics_table(metrics: &[ScenarioMetrics]) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    if metrics.is_empty() {
        return Err(CliError::Validation("no scenario metrics to report".into()));
    }
    let methods = metric_methods(metrics);
    let mut header: Vec<String> = [
        "regime",
        "c",
        "nu",
        "n",
        "replicates",
        "failed_replicates",
        "mean_corr_u",
        "mean_abs_smd_u_unadjusted",
        "mean_treated_fraction",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in &methods {
        header.extend(METHOD_METRICS.iter().map(|k| format!("{m}_{k}")));
    }
    let rows = metrics
        .iter()
        .map(|s| {
            let sc = &s.scenario;
            let mut r = vec![
                sc.regime.to_string(),
                sc.c.to_string(),
                sc.nu.to_string(),
                sc.n.to_string(),
                s.replicates.to_string(),
                s.failed_replicates.to_string(),
                s.mean_corr_u.to_string(),
                s.mean_abs_smd_u_unadjusted.to_string(),
                s.mean_treated_fraction.to_string(),
            ];
            for m in &methods {
                match s.get(*m) {
                    Some(mm) => r.extend([
                        mm.successes.to_string(),
                        mm.mean_estimate.to_string(),
                        mm.bias.to_string(),
                        mm.sd.to_string(),
                        mm.mean_se.to_string(),
                        mm.coverage.to_string(),
                        mm.mean_abs_smd_u.to_string(),
                        mm.pct_smd_u_balanced.to_string(),
                    ]),
                    None => r.extend(std::iter::repeat_n(String::new(), METHOD_METRICS.len())),
                }
            }
            r
        })
        .collect();
    Ok((header, rows))
}

pub fn metrics_csv(metrics: &[ScenarioMetrics]) -> CliResult<String> {
    let (header, rows) = metrics_table(metrics)?;
    csv_string(&header, &rows)
}

/// Human-readable metrics: one block per regime, one line per `(c, ν)`,
/// and bias / SD / coverage / mean SE per method.
pub fn metrics_text(metrics: &[ScenarioMetrics]) -> CliResult<String> {
    if metrics.is_empty() {
        return Err(CliError::Validation("no scenario metrics to report".into()));
    }
    let methods = metric_methods(metrics);
    let mut regimes: Vec<_> = metrics.iter().map(|s| s.scenario.regime).collect();
    regimes.dedup();
    let mut out = String::new();
    for regime in regimes {
        let _ = writeln!(out, "regime: {regime}");
        let mut header: Vec<String> = ["c", "nu", "reps", "failed", "corr(U,U_R)"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in &methods {
            header.extend(
                ["bias", "sd", "se", "cover%", "|smd_U|"]
                    .iter()
                    .map(|k| format!("{m}:{k}")),
            );
        }
        let rows: Vec<Vec<String>> = metrics
            .iter()
            .filter(|s| s.scenario.regime == regime)
            .map(|s| {
                let mut r = vec![
                    s.scenario.c.to_string(),
                    s.scenario.nu.to_string(),
                    s.replicates.to_string(),
                    s.failed_replicates.to_string(),
                    fixed(s.mean_corr_u, 3),
                ];
                for m in &methods {
                    match s.get(*m) {
                        Some(mm) => r.extend([
                            fixed(mm.bias, 3),
                            fixed(mm.sd, 3),
                            fixed(mm.mean_se, 3),
                            fixed(mm.coverage, 1),
                            fixed(mm.mean_abs_smd_u, 3),
                        ]),
                        None => r.extend(std::iter::repeat_n("-".to_string(), 5)),
                    }
                }
                r
            })
            .collect();
        out.push_str(&aligned(&header, &rows));
        out.push('\n');
    }
    Ok(out)
}

/// Deterministic description of a scenario for metadata files.
pub fn scenario_json(s: &geocausal_core::simulation::Scenario) -> Value {
    json!({
        "regime": s.regime.as_str(),
        "c": s.c,
        "nu": s.nu,
        "n": s.n,
        "replicates": s.replicates,
        "seed": s.seed,
        "domain": s.domain,
        "bootstrap": s.bootstrap,
        "bootstrap_mode": match s.bootstrap_mode {
            geocausal_core::bootstrap::BootstrapMode::FullRefit => "full",
            geocausal_core::bootstrap::BootstrapMode::FrozenCovariance => "frozen",
        },
        "methods": s.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use geocausal_core::simulation::{MethodMetrics, Regime, Scenario};

    fn att_rows() -> Vec<AttRow> {
        vec![
            AttRow {
                specification: "all".into(),
                result: AttResult::new(Method::Naive, 0.1 + 0.2, 1.0 / 3.0, 40, 60),
            },
            AttRow {
                specification: "without Z3".into(),
                result: AttResult::new(Method::RecoverU, -0.94, f64::NAN, 40, 60),
            },
        ]
    }

    #[test]
    fn att_round_trip_bits() {
        let rows = att_rows();
        let back = parse_att_csv(&att_csv(&rows).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.specification, b.specification);
            assert_eq!(format!("{:?}", a.result), format!("{:?}", b.result));
            assert_eq!(a.result.estimate.to_bits(), b.result.estimate.to_bits());
        }
        assert_eq!(back[0], rows[0]);
        assert!(att_text(&rows).contains("(-0.353, 0.953)"));
    }

    #[test]
    fn att_bad_header() {
        assert!(parse_att_csv("method,estimate\nnaive,1\n").is_err());
    }

    #[test]
    fn balance_round_trip() {
        let t = BalanceTable {
            methods: vec!["naive".into(), "recoveru".into()],
            rows: vec![
                BalanceRow {
                    variable: "Z1".into(),
                    kind: VariableKind::Continuous,
                    unadjusted: 0.31,
                    adjusted: vec![0.02, -1e-17],
                },
                BalanceRow {
                    variable: "Z5".into(),
                    kind: VariableKind::Binary,
                    unadjusted: -0.16,
                    adjusted: vec![0.1, 0.05],
                },
            ],
            threshold: 0.15,
        };
        let back = parse_balance_csv(&balance_csv(&t).unwrap(), 0.15).unwrap();
        assert_eq!(back, t);
        let text = balance_text(&t);
        assert!(text.contains("0.310*") && text.contains("-0.160*"));
    }

    fn metrics(regime: Regime, c: f64, nu: f64) -> ScenarioMetrics {
        ScenarioMetrics {
            scenario: Scenario {
                regime,
                c,
                nu,
                ..Scenario::default()
            },
            methods: vec![MethodMetrics {
                method: Method::Naive,
                successes: 10,
                mean_estimate: 1.2,
                bias: 0.2,
                sd: 0.1,
                mean_se: 0.09,
                coverage: 80.0,
                mean_abs_smd_u: 0.3,
                pct_smd_u_balanced: 40.0,
            }],
            mean_corr_u: f64::NAN,
            mean_abs_smd_u_unadjusted: 0.5,
            mean_treated_fraction: 0.3,
            replicates: 10,
            failed_replicates: 0,
        }
    }

    #[test]
    fn single_scenario_one_row() {
        let (header, rows) = metrics_table(&[metrics(Regime::Correct, 1.5, 1.5)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].len(), header.len());
        assert!(header.contains(&"naive_coverage".to_string()));
    }

    #[test]
    fn empty_metrics_error() {
        assert!(metrics_table(&[]).is_err());
        assert!(metrics_text(&[]).is_err());
    }

    #[test]
    fn grid_rows_per_regime() {
        let mut all = Vec::new();
        for regime in [Regime::Correct, Regime::MisspecBoth] {
            for c in geocausal_core::simulation::C_GRID {
                for nu in geocausal_core::simulation::NU_GRID {
                    all.push(metrics(regime, c, nu));
                }
            }
        }
        let (_, rows) = metrics_table(&all).unwrap();
        for regime in ["correct", "misspec-both"] {
            assert_eq!(rows.iter().filter(|r| r[0] == regime).count(), 12);
        }
        let text = metrics_text(&all).unwrap();
        assert_eq!(text.matches("regime:").count(), 2);
    }

    #[test]
    fn json_nan_is_null() {
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(num(0.5), json!(0.5));
    }
}
