//! End-to-end checks of the command-line interface and its file formats.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowexp"))
}

#[test]
fn cbhd_order5_matches_golden_file() {
    let out = bin()
        .args(["cbhd", "--args", "2", "--order", "5"])
        .output()
        .expect("run cbhd");
    assert!(out.status.success());
    let golden = include_str!("golden/cbhd_order5.csv");
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        golden,
        "cbhd table drifted from the golden file"
    );
}

#[test]
fn hall_export_has_eight_elements_at_length_four() {
    let out = bin()
        .args(["hall", "--q", "2", "--maxlen", "4"])
        .output()
        .expect("run hall");
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json");
    assert_eq!(v["elements"].as_array().unwrap().len(), 8);
    assert_eq!(v["alphabet_size"], 2);
}

#[test]
fn eval_report_round_trips_through_reader() {
    let out = bin()
        .args([
            "eval",
            "--method",
            "magnus",
            "--fixture",
            "normal-form-3d",
            "--t",
            "1/4",
            "--m",
            "2",
        ])
        .output()
        .expect("run eval");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json");
    let report = flowexp::report::error_report_from_json(&v).expect("reader");
    assert_eq!(report.method, "magnus");
    assert_eq!(report.points.len(), 1);
    assert!(report.points[0].error < 1e-3);
}

#[test]
fn coords_emits_csv() {
    let out = bin()
        .args(["coords", "--kind", "first", "--t", "1", "--m", "3"])
        .output()
        .expect("run coords");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("bracket,len,n,n0,value,decimal\n"));
    assert!(text.contains("\"0\",1,0,1,1/1,1"));
}

#[test]
fn identity_command_verifies() {
    let out = bin()
        .args(["identity", "--r", "1", "--nu", "2", "--trials", "2"])
        .output()
        .expect("run identity");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("identity holds exactly"));
}

#[test]
fn selftest_is_green() {
    let out = bin().args(["selftest"]).output().expect("run selftest");
    assert!(
        out.status.success(),
        "selftest failed:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS] suite 7"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn usage_error_exits_one() {
    let out = bin().args(["no-such-command"]).output().expect("run");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numeric_failure_exits_two() {
    // A two-point sweep cannot be fitted: numeric failure path.
    let out = bin()
        .args([
            "sweep", "--method", "magnus", "--m", "1", "--from", "7", "--to", "8",
        ])
        .output()
        .expect("run sweep");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn counterexamples_run() {
    for name in [
        "cbh-divergence",
        "magnus-control",
        "matrix-sussmann",
        "multi-input-failure",
    ] {
        let out = bin()
            .args(["counterexample", name])
            .output()
            .expect("run counterexample");
        assert!(out.status.success(), "{name} failed");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn wordseries_text_form_round_trips() {
    let out = bin()
        .args(["wordseries", "--t", "1/2", "--n", "3"])
        .output()
        .expect("run wordseries");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let series = flowexp::freealg::NcSeries::from_text(&text, 3).expect("parse back");
    assert_eq!(series.to_text(), text);
    // ⟨S, ε⟩ = 1 and the drift letter integrates to t.
    assert!(text.starts_with("=1/1\n"));
    assert!(text.contains("0=1/2"));
}

#[test]
fn eval_accepts_field_files() {
    let dir = std::env::temp_dir().join("flowexp_cli_field_test");
    std::fs::create_dir_all(&dir).unwrap();
    let (f0, f1) = flowexp::fixtures::normal_form_3d();
    let drift_path = dir.join("drift.json");
    let input_path = dir.join("input.json");
    std::fs::write(
        &drift_path,
        serde_json::to_string(&flowexp::fields::field_to_json(&f0)).unwrap(),
    )
    .unwrap();
    std::fs::write(
        &input_path,
        serde_json::to_string(&flowexp::fields::field_to_json(&f1)).unwrap(),
    )
    .unwrap();
    let out = bin()
        .args([
            "eval",
            "--method",
            "magnus",
            "--m",
            "2",
            "--t",
            "1/4",
            "--drift-file",
            drift_path.to_str().unwrap(),
            "--input-file",
            input_path.to_str().unwrap(),
            "--start",
            "1/4, -1/8, 1/12",
        ])
        .output()
        .expect("run eval with field files");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["points"][0]["error"].as_f64().unwrap() < 1e-4);
}
