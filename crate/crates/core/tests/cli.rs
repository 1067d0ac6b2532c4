//! The `dockswarm` binary: subcommands, exit codes and error messages.

use dockswarm::cli::{exit, OUT_ENV};
use std::process::{Command, Output};

fn dockswarm(args: &[&str], out: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dockswarm")).args(args).env(OUT_ENV, out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = dockswarm(&["launch"], dir.path());
    assert_eq!(o.status.code(), Some(exit::USAGE as i32));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn missing_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = dockswarm(&["run", "--scenario", "/no/such/scenario.toml"], dir.path());
    assert_eq!(o.status.code(), Some(exit::MISSING_SCENARIO as i32));
    assert!(stderr(&o).contains("scenario not found"));
}

#[test]
fn malformed_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\nname = \"x\"\nduration = \"long\"\n").unwrap();
    let o = dockswarm(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(exit::BAD_SCENARIO as i32));
    assert!(stderr(&o).contains("malformed scenario"));
}

#[test]
fn invalid_values_are_rejected_as_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/scenarios/baseline.toml")).unwrap();
    let path = dir.path().join("neg.toml");
    std::fs::write(&path, text.replace("duration = 120.0", "duration = -1.0")).unwrap();
    let o = dockswarm(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(exit::BAD_SCENARIO as i32), "{}", stderr(&o));
}

#[test]
fn unwritable_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = dockswarm(&["run", "--scenario", "baseline", "--out", blocker.join("sub").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(exit::OUTPUT_NOT_WRITABLE as i32));
    assert!(stderr(&o).contains("not writable"));
}

#[test]
fn run_writes_logs_under_the_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/scenarios/baseline.toml")).unwrap();
    let path = dir.path().join("short.toml");
    std::fs::write(&path, text.replace("duration = 120.0", "duration = 2.0")).unwrap();
    let o = dockswarm(&["run", "--scenario", path.to_str().unwrap(), "--seed", "3", "--trace"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = dir.path().join("sweep_T3_dt0.1_a0");
    for f in dockswarm::harness::RUN_FILES.iter().chain(&["scenario.toml", "trace.csv"]) {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let saved = dockswarm::harness::ScenarioConfig::load(&run_dir.join("scenario.toml")).unwrap();
    assert_eq!(saved.seed, dockswarm::harness::derive_seed(3, "sweep_T3_dt0.1_a0", &[0]));
}

#[test]
fn verify_and_report_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = dockswarm(&["verify"], dir.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 5);
    let o = dockswarm(&["report"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("report.csv").is_file());
}
