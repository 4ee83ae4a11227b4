use std::path::Path;
use std::process::{Command, Output};

use bohmlab::scenario::{presets, Overrides, ScenarioSpec};
use serde_json::Value;

fn bohmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bohmlab")).args(args).output().unwrap()
}

fn run_into(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", dir.to_str().unwrap()]);
    bohmlab(&all)
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error record on stderr");
    serde_json::from_str(line).unwrap()
}

fn write_scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run_into(&tmp.path().join(name), &["free-gaussian", "--trajectories", "300", "--seed", "9"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["report.json", "trajectories.csv", "histograms.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
}

#[test]
fn seed_changes_the_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, seed) in [("a", "1"), ("b", "2")] {
        assert!(run_into(&tmp.path().join(name), &["free-gaussian", "--trajectories", "100", "--seed", seed])
            .status
            .success());
    }
    let a = std::fs::read(tmp.path().join("a/trajectories.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/trajectories.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn emit_none_writes_only_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run_into(&dir, &["free-gaussian", "--trajectories", "100", "--emit", "none"]);
    assert!(out.status.success());
    let names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["report.json".to_string()]);
}

#[test]
fn unknown_key_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), r#"{"schema_version": 1, "kind": "free-gaussian", "colour": "red"}"#);
    let out = bohmlab(&["validate", &path]);
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "schema");
    assert!(rec["error"]["message"].as_str().unwrap().contains("colour"));

    let path = write_scenario(tmp.path(), r#"{"schema_version": 1, "kind": "free-gaussian", "params": {"sigma": 1.0, "wdith": 2}}"#);
    assert_eq!(error_record(&bohmlab(&["validate", &path]))["error"]["kind"], "schema");
}

#[test]
fn unnormalized_coefficients_name_the_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(
        tmp.path(),
        r#"{"schema_version": 1, "kind": "pointer-readout", "params": {"c1": [1, 0], "c2": [1, 0]}}"#,
    );
    let out = run_into(&tmp.path().join("run"), &[&path]);
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "semantic");
    assert!(rec["error"]["message"].as_str().unwrap().contains("|c1|^2 + |c2|^2 = 1"));
}

#[test]
fn missing_scenario_is_reported() {
    let out = bohmlab(&["validate", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "configuration");
}

#[test]
fn scenarios_survive_a_round_trip() {
    for p in presets() {
        let text = p.scenario.to_json().to_string();
        let back = ScenarioSpec::from_json(&text, &Overrides::default()).unwrap();
        assert_eq!(back, p.scenario, "{}", p.name);
        assert_eq!(back.to_json().to_string(), text);
    }
}

#[test]
fn validate_prints_the_resolved_scenario() {
    let out = bohmlab(&["validate", "pointer-readout", "--seed", "42", "--trajectories", "77"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scenario"]["ensemble"]["seed"], 42);
    assert_eq!(v["scenario"]["ensemble"]["trajectories"], 77);
    let text = v["scenario"].to_string();
    let spec = ScenarioSpec::from_json(&text, &Overrides::default()).unwrap();
    assert_eq!(spec.ensemble.trajectories, 77);
}

fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let mid = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    (mid - half, mid + half)
}

#[test]
fn pointer_readout_rate_matches_born_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let n = 400;
    let out = run_into(&dir, &["pointer-readout", "--trajectories", &n.to_string(), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Final pointer coordinate of every trajectory, read back from the table.
    let mut reader = csv::Reader::from_path(dir.join("trajectories.csv")).unwrap();
    let mut last: Vec<f64> = vec![f64::NAN; n];
    for row in reader.records() {
        let row = row.unwrap();
        let i: usize = row[0].parse().unwrap();
        last[i] = row[3].parse().unwrap();
    }
    let left = last.iter().filter(|&&y| y < 0.0).count();
    let (lo, hi) = wilson(left, n, 1.96);
    assert!(lo <= 0.3 && 0.3 <= hi, "{left}/{n}: [{lo}, {hi}]");

    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let check = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "born-rule-empirical").unwrap();
    assert!((check["value"].as_f64().unwrap() - left as f64 / n as f64).abs() < 1e-12);
    assert_eq!(report["verdict"], "pass");
}

#[test]
fn report_command_summarizes_a_stored_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(run_into(&dir, &["free-gaussian", "--trajectories", "50"]).status.success());
    let out = bohmlab(&["report", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trajectories"], 50);
    assert_eq!(v["kind"], "free-gaussian");
}

#[test]
fn presets_are_listed() {
    let out = bohmlab(&["presets"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"double-slit") && names.contains(&"packet-exchange"));
}
