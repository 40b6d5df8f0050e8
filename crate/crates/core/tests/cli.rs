use serde_json::Value;
use std::path::Path;
use std::process::Command;

fn disphyp(dir: &Path, config: &str, args: &[&str]) -> (i32, Value) {
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_disphyp"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--no-cache")
        .args(args)
        .output()
        .unwrap();
    let report = std::fs::read_to_string(out.join("report.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    (status.status.code().unwrap(), report)
}

#[test]
fn empty_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = disphyp(dir.path(), r#"{"system": {"family": "wave_const"}, "stages": []}"#, &["run"]);
    assert_eq!(code, 0);
    assert_eq!(report["stages"].as_array().map(Vec::len), Some(0));
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(disphyp(dir.path(), r#"{"system": {"family": "no_such_family"}}"#, &["check"]).0, 2);
    assert_eq!(disphyp(dir.path(), r#"{"system": {"family": "wave_const"}, "bogus": 1}"#, &["check"]).0, 2);
    let status = Command::new(env!("CARGO_BIN_EXE_disphyp")).arg("check").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn check_reports_each_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"system": {"family": "wave_slow_osc"}}"#;
    let (code, report) = disphyp(dir.path(), cfg, &["check"]);
    assert_eq!(code, 1);
    let first = std::fs::read(dir.path().join("out/report.json")).unwrap();
    let stage = &report["stages"][0];
    assert_eq!(stage["stage"], "assumptions");
    let checks = &stage["report"];
    let flags: Vec<bool> = ["a1", "a2", "a3", "a4"].iter().map(|k| checks[k]["pass"].as_bool().unwrap()).collect();
    assert_eq!(flags, [true, true, true, false]);

    let (again, _) = disphyp(dir.path(), cfg, &["check"]);
    assert_eq!(again, 1);
    assert_eq!(std::fs::read(dir.path().join("out/report.json")).unwrap(), first);
}
