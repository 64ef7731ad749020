use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geocausal::core::causal::{run_recoveru, EstimateOptions, Method};
use geocausal::core::simulation::generate_wide;
use geocausal::ingest::{read_dataset_file, ColumnMapping, DuplicatePolicy};
use geocausal::report::{parse_att_csv, parse_balance_csv};

const BIN: &str = env!("CARGO_BIN_EXE_geocausal");

fn geocausal(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run binary")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generated(dir: &Path, n: usize, p: usize) -> PathBuf {
    let csv = dir.join("data.csv");
    let o = geocausal(&[
        "generate",
        "--n",
        &n.to_string(),
        "--p",
        &p.to_string(),
        "--seed",
        "4",
        "--out",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    csv
}

#[test]
fn simulate_single_scenario_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = geocausal(&[
        "simulate",
        "--c",
        "1.5",
        "--nu",
        "1.5",
        "--reps",
        "3",
        "--n",
        "60",
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().next().unwrap().contains("recoveru_bias"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 2);
    assert_eq!(meta["scenarios"][0]["replicates"], 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["versions"]["geocausal"].is_string());
}

#[test]
fn simulate_full_grid_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = geocausal(&[
        "simulate",
        "--full",
        "--reps",
        "1",
        "--n",
        "40",
        "--methods",
        "naive",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines()
            .skip(1)
            .filter(|l| l.starts_with("correct,"))
            .count(),
        12
    );
}

#[test]
fn simulate_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = geocausal(&[
            "simulate",
            "--reps",
            "2",
            "--n",
            "50",
            "--seed",
            "11",
            "--jobs",
            "2",
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        tables.push(fs::read(out.join("metrics.csv")).unwrap());
        tables.push(fs::read(out.join("metadata.json")).unwrap());
    }
    assert_eq!(tables[0], tables[2]);
    assert_eq!(tables[1], tables[3]);
}

#[test]
fn simulate_off_grid_is_validation_error() {
    let o = geocausal(&["simulate", "--c", "2.0", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1.5, 0.75, 0.3"));
}

#[test]
fn analyze_matches_in_process_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 90, 5);
    let out = dir.path().join("report");
    let o = geocausal(&[
        "analyze",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--methods",
        "recoveru,naive",
        "--bootstrap",
        "0",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let att = parse_att_csv(&fs::read_to_string(out.join("att.csv")).unwrap()).unwrap();
    assert_eq!(att.len(), 2);
    assert_eq!(att[0].result.method, Method::RecoverU);
    assert!(att[0].result.std_error.is_nan());

    let sim = generate_wide(90, 5, 1.5, 1.5, 4).unwrap();
    let direct = run_recoveru(&sim.data, &EstimateOptions::default()).unwrap();
    assert_eq!(
        att[0].result.estimate.to_bits(),
        direct.att.estimate.to_bits()
    );

    let balance =
        parse_balance_csv(&fs::read_to_string(out.join("balance.csv")).unwrap(), 0.2).unwrap();
    assert_eq!(balance.methods, ["recoveru", "naive"]);
    let vars: Vec<&str> = balance.rows.iter().map(|r| r.variable.as_str()).collect();
    assert_eq!(vars, ["Z1", "Z2", "Z3", "Z4", "Z5", "U_R", "U"]);
}

#[test]
fn analyze_sensitivity_adds_rows_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 120, 5);
    let out = dir.path().join("report");
    let o = geocausal(&[
        "analyze",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--methods",
        "naive,gls,recoveru",
        "--bootstrap",
        "10",
        "--bootstrap-mode",
        "frozen",
        "--sensitivity",
        "Z3,Z5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let att = parse_att_csv(&fs::read_to_string(out.join("att.csv")).unwrap()).unwrap();
    assert_eq!(att.len(), 9);
    let specs: Vec<&str> = att.iter().map(|r| r.specification.as_str()).collect();
    assert_eq!(&specs[..3], ["all"; 3]);
    assert!(specs[3..6].iter().all(|s| *s == "without Z3"));
    assert!(specs[6..].iter().all(|s| *s == "without Z5"));
    assert_ne!(att[0].result.estimate, att[3].result.estimate);
    assert!(att[2].result.std_error.is_finite());

    // Rerunning with the covariate dropped reproduces the sensitivity rows.
    let out2 = dir.path().join("dropped");
    let o = geocausal(&[
        "analyze",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--methods",
        "naive,gls,recoveru",
        "--bootstrap",
        "10",
        "--bootstrap-mode",
        "frozen",
        "--drop",
        "Z3",
        "--out",
        s(&out2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dropped = parse_att_csv(&fs::read_to_string(out2.join("att.csv")).unwrap()).unwrap();
    for (a, b) in dropped.iter().zip(&att[3..6]) {
        assert_eq!(a, b);
    }
}

#[test]
fn analyze_config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 60, 4);
    let out = dir.path().join("report");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# analysis\ninput = {}\ntrue_u = U\nmethods = naive\nthreshold = 0.3\nout = {}\n",
            csv.display(),
            out.display()
        ),
    )
    .unwrap();
    let o = geocausal(&["analyze", "--config", s(&cfg), "--threshold", "0.15"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["threshold"], 0.15);
}

#[test]
fn zero_methods_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "input = x.csv\nmethods =\n").unwrap();
    let o = geocausal(&["analyze", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("methods"));
}

#[test]
fn malformed_config_fields_all_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        "input = x.csv\nthreshold = high\nbootstrap_mode = fast\nspeed = 3\n",
    )
    .unwrap();
    let o = geocausal(&["analyze", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for key in ["`threshold`", "`bootstrap_mode`", "`speed`"] {
        assert!(err.contains(key), "{key} not in {err}");
    }
}

#[test]
fn non_binary_treatment_exit_one_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "x,y,treatment,outcome,z\n0,0,1,1,0.5\n1,1,2,0,0.1\n").unwrap();
    let o = geocausal(&[
        "analyze",
        "--input",
        s(&csv),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn missing_input_file_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = geocausal(&["analyze", "--input", s(&dir.path().join("absent.csv"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unwritable_output_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 40, 4);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = geocausal(&[
        "balance",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--out",
        s(&blocker.join("sub")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn failed_method_gives_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 60, 4);
    // A constant "confounder" is collinear with the intercept.
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let mut patched = format!("{},K\n", lines.next().unwrap());
    for l in lines {
        patched.push_str(&format!("{l},1\n"));
    }
    fs::write(&csv, patched).unwrap();
    let out = dir.path().join("o");
    let o = geocausal(&[
        "analyze",
        "--input",
        s(&csv),
        "--covariates",
        "Z1,Z2,Z3,Z4",
        "--true-u",
        "K",
        "--methods",
        "naive,gold",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let att = parse_att_csv(&fs::read_to_string(out.join("att.csv")).unwrap()).unwrap();
    assert_eq!(att.len(), 1);
    assert_eq!(att[0].result.method, Method::Naive);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
    assert!(manifest["failures"][0].as_str().unwrap().contains("gold"));
}

#[test]
fn balance_command_only_writes_balance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 70, 6);
    let out = dir.path().join("bal");
    let o = geocausal(&[
        "balance",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--threshold",
        "0.15",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("att.csv").exists());
    let t = parse_balance_csv(&fs::read_to_string(out.join("balance.csv")).unwrap(), 0.15).unwrap();
    assert_eq!(t.methods, ["naive", "recoveru"]);
    assert_eq!(t.rows.len(), 8);
    assert!(fs::read_to_string(out.join("balance.txt"))
        .unwrap()
        .contains("|SMD| > 0.15"));
}

#[test]
fn recover_appends_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 70, 4);
    let out = dir.path().join("rec");
    let o = geocausal(&[
        "recover",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let back = read_dataset_file(
        &out.join("recovered.csv"),
        &ColumnMapping::default(),
        &["U", "U_R"],
        DuplicatePolicy::Reject,
    )
    .unwrap();
    let original = read_dataset_file(
        &csv,
        &ColumnMapping::default(),
        &["U"],
        DuplicatePolicy::Reject,
    )
    .unwrap();
    assert_eq!(back.data, original.data);
    assert_eq!(back.extra[0].1, original.extra[0].1);
    assert_eq!(back.extra[1].1.len(), 70);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["corr_true_u"].as_f64().unwrap() > 0.5);
}

#[test]
fn duplicate_locations_need_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generated(dir.path(), 50, 4);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let coords: Vec<String> = lines[1].split(',').take(2).map(String::from).collect();
    let mut row: Vec<String> = lines[2].split(',').map(String::from).collect();
    row[0] = coords[0].clone();
    row[1] = coords[1].clone();
    lines[2] = row.join(",");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("o");
    let o = geocausal(&[
        "recover",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duplicate"));
    let o = geocausal(&[
        "recover",
        "--input",
        s(&csv),
        "--true-u",
        "U",
        "--jitter",
        "0.001",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: jittered 1"));
}

#[test]
fn help_exits_zero_and_bad_flag_exits_one() {
    assert_eq!(geocausal(&["--help"]).status.code(), Some(0));
    assert_eq!(geocausal(&["simulate", "--bogus"]).status.code(), Some(1));
}
