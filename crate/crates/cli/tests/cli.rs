use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ecd_lab::{load_str, run, validate, RunOptions, KINDS};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecd-lab"))
}

fn opts(out: &Path, workers: usize) -> RunOptions {
    RunOptions {
        out_dir: Some(out.to_path_buf()),
        workers: Some(workers),
        overrides: Vec::new(),
    }
}

const FAST: [&str; 8] = [
    "classical_orbit.toml",
    "lw_field_map.toml",
    "conservation_audit.toml",
    "conservation_audit_ecd.toml",
    "free_ecd.toml",
    "guiding_run.toml",
    "classical_limit_sweep.toml",
    "current_regularization.toml",
];

#[test]
fn shipped_scenarios_validate_clean() {
    let mut kinds = Vec::new();
    for name in FAST {
        assert_eq!(validate(&scenario(name)).unwrap(), vec![], "{name}");
        let text = fs::read_to_string(scenario(name)).unwrap();
        kinds.push(load_str(&text, &[]).unwrap().kind);
    }
    for k in KINDS {
        assert!(kinds.iter().any(|x| x == k), "no sample scenario for {k}");
    }
}

#[test]
fn negative_epsilon_is_reported_by_path() {
    let text = fs::read_to_string(scenario("free_ecd.toml")).unwrap();
    let d = load_str(&text, &["calibration.epsilon=-1".into()]).unwrap_err();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].path.as_deref(), Some("calibration.epsilon"));
    assert!(d[0].message.starts_with("calibration.epsilon must be positive"), "{}", d[0].message);
}

#[test]
fn unknown_keys_are_errors() {
    let text = fs::read_to_string(scenario("classical_orbit.toml")).unwrap();
    let d = load_str(&text, &["integration.stepsize=1e-3".into()]).unwrap_err();
    assert_eq!(d[0].path.as_deref(), Some("integration.stepsize"));
    let d = load_str(&text, &["field.amplitude=1".into()]).unwrap_err();
    assert!(d[0].message.contains("amplitude"), "{}", d[0].message);
    let d = load_str(&text, &["output.format=\"csv\"".into()]).unwrap_err();
    assert_eq!(d[0].path.as_deref(), Some("output.format"));
}

#[test]
fn missing_sections_and_wrong_schema() {
    let d = load_str("schema = 1\nkind = \"free-ecd\"\n", &[]).unwrap_err();
    assert!(d[0].message.contains("missing field"), "{}", d[0].message);
    let d = load_str("schema = 2\nkind = \"free-ecd\"\n", &[]).unwrap_err();
    assert_eq!(d[0].path.as_deref(), Some("schema"));
    let text = fs::read_to_string(scenario("conservation_audit.toml")).unwrap();
    let d = load_str(&text, &["source=\"free-ecd\"".into()]).unwrap_err();
    assert!(d.iter().any(|x| x.message.contains("missing section [pair]")));
}

#[test]
fn empty_file_fails_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    fs::write(&path, "").unwrap();
    let out = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn misspelled_kind_lists_allowed_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.toml");
    fs::write(&path, "schema = 1\nkind = \"clasical-orbit\"\n").unwrap();
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for k in KINDS {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn parse_error_carries_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.toml");
    fs::write(&path, "schema = 1\nkind = \"free-ecd\"\n[pair\n").unwrap();
    let d = validate(&path).unwrap();
    assert_eq!(d[0].line, Some(3));
    assert!(d[0].to_string().starts_with("line 3, column"));
}

#[test]
fn exit_status_distinguishes_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["run", "--workers", "1", "--out"])
        .arg(dir.path())
        .arg(scenario("classical_orbit.toml"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    // gating check missed
    let acc = bin()
        .args(["run", "--out"])
        .arg(dir.path())
        .arg(scenario("guiding_run.toml"))
        .args(["--override", "guiding.velocity_tolerance=1e-9"])
        .output()
        .unwrap();
    assert_eq!(acc.status.code(), Some(4));
    // no retarded root on the integrated orbit
    let num = bin()
        .args(["run", "--out"])
        .arg(dir.path())
        .arg(scenario("lw_field_map.toml"))
        .args(["--override", "integration.s_span=[45.0, 50.0]"])
        .output()
        .unwrap();
    assert_eq!(num.status.code(), Some(3), "{}", String::from_utf8_lossy(&num.stderr));
    let missing = bin().args(["run", "/nonexistent/scenario.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("ECD_LAB_OUT", dir.path())
        .args(["run"])
        .arg(scenario("classical_orbit.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn classical_orbit_drift_column_stays_below_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&scenario("classical_orbit.toml"), &opts(dir.path(), 1)).unwrap();
    assert!(m.passed);
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let drift_col = rdr.headers().unwrap().iter().position(|h| h == "drift").unwrap();
    let worst = rdr
        .records()
        .map(|r| r.unwrap()[drift_col].parse::<f64>().unwrap().abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "drift {worst}");
    assert_eq!(m.outputs[0].rows, 10_001);
}

#[test]
fn free_ecd_manifest_reports_calibration_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&scenario("free_ecd.toml"), &opts(dir.path(), 1)).unwrap();
    let n = m.checks.iter().find(|c| c.name == "calibration_n").unwrap();
    assert!((n.value + 50.6606).abs() < 1e-4, "{}", n.value);
    let r = m.checks.iter().find(|c| c.name == "consistency_residual").unwrap();
    assert!(r.passed && r.value <= 1e-3);
    let ctl = m.checks.iter().find(|c| c.name == "negative_control_residual").unwrap();
    assert!(ctl.value > 0.1);
    assert!(m.tolerances.contains_key("quadrature.max_tail_bound"));

    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["manifest_schema"], 1);
    assert_eq!(v["scenario"]["calibration"]["epsilon"], 1e-3);
    assert!(v["started_at"].as_str().unwrap().ends_with('Z'));
}

#[test]
fn override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path(), 1);
    o.overrides = vec!["calibration.epsilon=1e-2".into()];
    let m = run(&scenario("free_ecd.toml"), &o).unwrap();
    let n = m.checks.iter().find(|c| c.name == "calibration_n").unwrap();
    assert!((n.value + 5.06606).abs() < 1e-5);
    assert_eq!(m.overrides, o.overrides);
}

#[test]
fn every_check_carries_a_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&scenario("current_regularization.toml"), &opts(dir.path(), 1)).unwrap();
    assert!(m.passed);
    for c in &m.checks {
        assert!(c.tolerance.is_finite());
        assert!(c.window.is_some(), "{} has no fit window", c.name);
    }
    let slope = m.checks.iter().find(|c| c.name == "tail_slope").unwrap();
    assert!((slope.value + 1.0).abs() < 0.02);
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    for name in FAST {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = run(&scenario(name), &opts(a.path(), 1)).unwrap();
        let mb = run(&scenario(name), &opts(b.path(), 3)).unwrap();
        let (ca, cb) = (csv_bytes(a.path()), csv_bytes(b.path()));
        assert!(!ca.is_empty(), "{name} wrote no CSV");
        assert_eq!(ca, cb, "{name}: CSV differs between 1 and 3 workers");
        let strip = |m: &ecd_lab::RunManifest| serde_json::to_string(&(&m.checks, &m.tolerances, &m.outputs)).unwrap();
        assert_eq!(strip(&ma), strip(&mb), "{name}");
    }
}
