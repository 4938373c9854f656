use std::path::Path;
use std::process::{Command, Output};

fn csa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csa")).args(args).output().expect("spawn csa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_record(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("json error record")
}

#[test]
fn lists_presets() {
    let o = csa(&["list-presets"]);
    assert!(o.status.success());
    let names = stdout(&o);
    for p in ["stationary", "stress_noise", "ablation_lambda", "sparse_sweep", "epoch_demo"] {
        assert!(names.lines().any(|l| l == p), "{p}");
    }
}

#[test]
fn runs_preset_and_reemits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("noise");
    let o = csa(&["run", "stress_noise", "--reps", "2", "--threads", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).trim_start().starts_with("p "));
    for f in ["summary.json", "table.csv", "trajectory.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "p,risk_mean,risk_max,ar_mean");
    assert_eq!(table.lines().count(), 7);

    let bundle = out.join("summary.json");
    let o = csa(&["emit", bundle.to_str().unwrap(), "--format", "table-csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), table);

    let o = csa(&["emit", bundle.to_str().unwrap(), "--format", "trajectory-csv"]);
    assert_eq!(stdout(&o).lines().count(), 1 + 6 * 3000);
}

#[test]
fn explicit_seeds_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = csa(&["run", "stationary", "--seeds", "7,8,9", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(bundle["provenance"]["seeds"], serde_json::json!([7, 8, 9]));
    assert_eq!(bundle["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = csa(&["show-preset", "ablation_grid"]);
    assert!(o.status.success());
    let path = dir.path().join("grid.toml");
    let text = stdout(&o).replace("n_reps = 50", "n_reps = 1");
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("out");
    let o = csa(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(&out.join("table.csv")).is_file());
}

#[test]
fn unknown_preset_fails_with_record() {
    let o = csa(&["run", "no_such_preset"]);
    assert!(!o.status.success());
    let rec = error_record(&o);
    assert_eq!(rec["error"], "unknown_preset");
    assert!(rec["message"].as_str().unwrap().contains("stationary"));
}

#[test]
fn bad_config_and_format_fail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\n[method]\nkind = \"csa\"\n").unwrap();
    let o = csa(&["run", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(error_record(&o)["error"], "config");

    let o = csa(&["emit", path.to_str().unwrap(), "--format", "pdf"]);
    assert!(!o.status.success());
    assert_eq!(error_record(&o)["error"], "invalid_parameter");
}
