use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foliation-blowup"))
}

fn run_file(dir: &Path, body: &str, extra: &[&str]) -> Output {
    let file = dir.join("scenario.json");
    fs::write(&file, body).unwrap();
    let out = dir.join("out");
    bin()
        .arg("run")
        .arg(&file)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap()
}

const LINE: &str = r#"{"n": 1, "generators": [{"components": [[{"exponents": [0], "coeff": 1.0}]]}]}"#;
const SQUARE: &str = r#"{"n": 1, "generators": [{"components": [[{"exponents": [2], "coeff": 1.0}]]}]}"#;

fn scenario(payload: &str, probes: &str) -> String {
    format!(r#"{{"kind": "poly_foliation", "payload": {payload}, "seed": 1, "probes": {probes}}}"#)
}

#[test]
fn examples_lists_builtins() {
    let out = bin().arg("examples").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sl2") && text.contains("bump"));
    assert!(text.lines().count() >= 5);
}

#[test]
fn empty_probe_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_file(dir.path(), &scenario(LINE, "[]"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["probes"], 0);
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 1);
}

#[test]
fn passing_probe_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let probes = r#"[{"op": "flow", "params": {"y": [0.0], "t": [1.5]}, "expect": {"point.0": {"approx": 1.5}}}]"#;
    let out = run_file(dir.path(), &scenario(LINE, probes), &[]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/0-flow.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "passed");
    assert_eq!(report["result"]["point"][0].as_f64(), Some(1.5));
}

#[test]
fn failed_assertion_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let probes = r#"[{"op": "flow", "params": {"y": [0.0], "t": [1.5]}, "expect": {"point.0": 2.0}}]"#;
    let out = run_file(dir.path(), &scenario(LINE, probes), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn expected_errors_pass() {
    let dir = tempfile::tempdir().unwrap();
    let probes = r#"[{"op": "flow", "params": {"y": [1.0], "t": [2.0]}, "expect": {"error": "FlowEscape"}}]"#;
    let out = run_file(dir.path(), &scenario(SQUARE, probes), &[]);
    assert_eq!(out.status.code(), Some(0));
    let probes = r#"[{"op": "flow", "params": {"y": [1.0], "t": [2.0]}}]"#;
    let out = run_file(dir.path(), &scenario(SQUARE, probes), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schema_errors_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let body = scenario(LINE, "[\n  {\"op\": \"flow\", \"params\": {\"y\": [0.0], \"time\": [1.0]}}\n]");
    let out = run_file(dir.path(), &body, &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("scenario.json:2:"), "{err}");
    assert!(err.contains("unknown field"), "{err}");
}

#[test]
fn bad_dimensions_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let probes = r#"[{"op": "isotropy", "params": {"x": [0.0, 1.0]}}]"#;
    let out = run_file(dir.path(), &scenario(LINE, probes), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_builtin_is_rejected() {
    let out = bin().args(["run", "--builtin", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_mirrors_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"kind": "poly_foliation", "payload": {LINE}, "probes": [{{"op": "blowup_fiber", "params": {{"x": [0.0]}}}}], "output": {{"format": "csv"}}}}"#
    );
    let out = run_file(dir.path(), &body, &[]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("out/0-blowup_fiber-rays.csv")).unwrap();
    assert!(csv.starts_with("cluster,direction.0"));
    assert_eq!(csv.lines().count(), 65);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn builtin_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run", "--builtin", "bump", "--seed", "7", "--out"])
            .arg(&out)
            .args(extra)
            .output()
            .unwrap()
            .status;
        assert_eq!(status.code(), Some(0));
        read_dir_sorted(&out)
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--parallel"]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.len() > 5);
}
