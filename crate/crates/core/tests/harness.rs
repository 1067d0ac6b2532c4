//! Closed-loop harness properties: determinism, exact tracking when
//! nothing perturbs the chaser, integrator refinement, docking progress and
//! the report command.

use dockswarm::harness::{
    collision_avoidance, compute_metrics, four_chaser_docking, report, run, run_to_dir, single_chaser, sweep_from,
    run_batch, EstimatorMode, GridPoint, ScenarioConfig, DOCKED_STANDOFF, STANDOFF,
};
use std::path::Path;

fn short_baseline(duration: f64) -> ScenarioConfig {
    let mut cfg = single_chaser(GridPoint::BASELINE);
    cfg.duration = duration;
    cfg.seed = 42;
    cfg
}

#[test]
fn identical_config_gives_identical_logs() {
    let cfg = short_baseline(8.0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to_dir(&cfg, a.path(), false).unwrap();
    run_to_dir(&cfg, b.path(), false).unwrap();
    let mut compared = 0;
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "timing.csv" {
            continue;
        }
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
        compared += 1;
    }
    assert!(compared >= 8);
}

#[test]
fn different_seeds_give_different_noise() {
    let a = run(&short_baseline(3.0)).unwrap();
    let mut cfg = short_baseline(3.0);
    cfg.seed = 43;
    let b = run(&cfg).unwrap();
    assert_ne!(a.ticks.last().unwrap().chasers[0].truth, b.ticks.last().unwrap().chasers[0].truth);
}

/// Static target, perfect state knowledge and a chaser starting at rest on
/// its reference: the optimal input is zero and the chaser never moves.
#[test]
fn on_reference_with_perfect_knowledge_stays_put() {
    let mut cfg = collision_avoidance();
    cfg.chasers.remove(0);
    cfg.events = Default::default();
    cfg.estimator = EstimatorMode::GroundTruth;
    cfg.duration = 10.0;
    let m = compute_metrics(&run(&cfg).unwrap()).unwrap();
    assert!(m.chasers[0].position_mse < 1e-6, "{}", m.chasers[0].position_mse);
    assert!(m.chasers[0].orientation_mse < 1e-6, "{}", m.chasers[0].orientation_mse);
}

#[test]
fn halving_the_physics_substep_barely_changes_the_result() {
    let mse = |h: f64| {
        let mut cfg = short_baseline(30.0);
        cfg.estimator = EstimatorMode::GroundTruth;
        cfg.physics_substep = h;
        compute_metrics(&run(&cfg).unwrap()).unwrap().mean_position_mse()
    };
    let (coarse, fine) = (mse(1e-3), mse(5e-4));
    assert!((coarse - fine).abs() <= 0.05 * fine, "{coarse} vs {fine}");
}

#[test]
fn docking_chasers_close_in_steadily() {
    let cfg = four_chaser_docking();
    let start = cfg.events.docking.events[0].time;
    let log = run(&cfg).unwrap();
    let band = 0.05 * STANDOFF;
    for i in [0, 3] {
        let mut best = f64::INFINITY;
        let mut last_s = 1.0;
        for t in log.ticks.iter().filter(|t| t.time >= start) {
            let c = &t.chasers[i];
            assert!(c.s_dock <= last_s + 1e-12, "scale grew at t = {}", t.time);
            last_s = c.s_dock;
            let d = (c.truth.p - t.target.p).norm();
            assert!(d <= best + band, "chaser {i} backed off at t = {}: {d} after {best}", t.time);
            best = best.min(d);
        }
        assert!((best - DOCKED_STANDOFF).abs() < 0.1, "chaser {i} closest approach {best}");
    }
}

fn read(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn report_rebuilds_the_sweep_table() {
    let mut base = short_baseline(2.0);
    base.name = "mini".into();
    let out = tempfile::tempdir().unwrap();
    run_batch(&sweep_from(&base, 9), out.path(), 0, false).unwrap();
    let rows = report(out.path()).unwrap();
    let sweep = read(&out.path().join("sweep_summary.csv"));
    let rebuilt = read(&out.path().join("report.csv"));
    assert_eq!(rows.len() + 1, sweep.len());
    assert_eq!(sweep, rebuilt);
}

#[test]
fn shipped_scenario_files_match_the_builders() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios");
    let mut n = 0;
    for name in dockswarm::cli::BUILTINS {
        let mut loaded = ScenarioConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
        loaded.base_dir = None;
        assert_eq!(loaded, dockswarm::cli::builtin(name).unwrap(), "{name}");
        n += 1;
    }
    assert_eq!(n, std::fs::read_dir(&dir).unwrap().count());
}
