use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barenblatt"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("SOLVER_SEED")
        .output()
        .expect("spawn barenblatt")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn zero_data_solve_stays_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero");
    let output = run(&["solve"], &configs().join("zero.toml"), &out);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let mut reader = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let norm_columns: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("l2_") || h.starts_with("h1semi_"))
        .map(|(i, _)| i)
        .collect();
    assert!(!norm_columns.is_empty());
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        for &i in &norm_columns {
            assert_eq!(record[i].parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 17);
    for name in ["summary.json", "manifest.json"] {
        assert!(out.join(name).is_file());
    }
}

#[test]
fn manifest_records_seed_source_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let output = Command::new(env!("CARGO_BIN_EXE_barenblatt"))
        .args(["mc", "--paths", "4", "--threads", "2", "--config"])
        .arg(configs().join("zero.toml"))
        .arg("--out")
        .arg(&out)
        .env("SOLVER_SEED", "42")
        .output()
        .unwrap();
    assert!(output.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["seed_source"], "env:SOLVER_SEED");
    assert_eq!(manifest["threads"], 2);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(files.contains(&"moments.csv"));
}

#[test]
fn rejected_configuration_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[mesh]\ncells = [8]\n[time]\nhorizon = 2.0\nsteps = 1\n",
    );
    let out = dir.path().join("never");
    let output = run(&["solve"], &config, &out);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("dt"));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[mesh]\ncells = [8]\ncolour = 1\n");
    let out = dir.path().join("never");
    let output = run(&["solve"], &config, &out);
    assert_eq!(output.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn picard_condition_violation_is_rejected_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[mesh]
cells = [8]
[time]
steps = 8
[noise]
kind = "multiplicative"
map = "affine"
scale = 0.5
offset = "1"
[picard]
max_iterations = 2
[montecarlo]
paths = 2
"#,
    );
    let out = dir.path().join("p");
    let output = run(&["picard"], &config, &out);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("contraction condition"));
    assert!(!out.exists());

    // Overridden, the iteration runs but cannot reach the tolerance in two sweeps.
    let output = run(&["picard", "--override-picard-condition"], &config, &out);
    assert_ne!(output.status.code(), Some(0));
}

#[test]
fn constants_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_barenblatt"))
        .args(["constants", "--c-alpha", "1", "--cbar-alpha", "1", "--horizon", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("134.52198870467"));
}
