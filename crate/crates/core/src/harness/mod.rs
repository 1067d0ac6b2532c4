//! Closed-loop scenario engine: configuration, the per-tick loop, metrics,
//! CSV logs, the built-in suite and log aggregation.

mod metrics;
mod output;
mod run;
mod scenario;
mod suite;

pub use metrics::{compute_metrics, ChaserMetrics, MetricsSummary};
pub use output::{write_run, RUN_FILES, SUMMARY_HEADER};
pub use run::{run, run_traced, ChaserRecord, PwmRecord, RunLog, SolveStatus, SolverRecord, TickRecord};
pub use scenario::{
    CameraSpec, ChaserSpec, Disturbance, EstimatorMode, EventSchedule, LayoutSpec, Mode, PlanarSpec,
    ReferenceChange, ScenarioConfig, TargetChange, TargetSpec, ThrusterSpec, SCHEMA_VERSION,
};
pub use suite::{
    aggregate, at_grid_point, collision_avoidance, displaced_start, four_chaser_docking, orbital_target, run_batch, run_to_dir,
    scenario_suite, single_chaser, slider_docking, sweep, sweep_from, sweep_grid, two_chaser_tracking, write_table, GridPoint,
    RunOutcome, RunSample, SuiteRun, TableRow, DOCKED_STANDOFF, FLIP_TIME, SLIDER_DOCKING_DISTANCE, SLIDER_STANDOFF,
    STANDOFF, SWEEP_REPS, TABLE_HEADER, TARGET_ANGULAR_VELOCITY, TARGET_VELOCITY,
};

use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("run aborted at t = {time} s: non-finite {what}")]
    Diverged { time: f64, what: String },
}

/// Stable 64-bit seed from a master seed, a key and integer indices.
pub fn derive_seed(master: u64, key: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Rebuild the (T, dt, α) table from run directories under `root`: every
/// subdirectory holding `scenario.toml` and `summary.csv` contributes one
/// sample. Returns the rows written to `root/report.csv`.
pub fn report(root: &Path) -> Result<Vec<TableRow>, HarnessError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| HarnessError::Io { path: p, source: e }
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scenario.toml").is_file() && p.join("summary.csv").is_file())
        .collect();
    dirs.sort();
    let mut samples = Vec::new();
    for d in &dirs {
        let cfg = ScenarioConfig::load(&d.join("scenario.toml"))?;
        let path = d.join("summary.csv");
        let mut rdr = csv::Reader::from_path(&path).map_err(output::csv_err(&path))?;
        let header = rdr.headers().map_err(output::csv_err(&path))?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| HarnessError::Csv { path: path.clone(), message: format!("missing column {name}") })
        };
        let (cp, co, cf) = (col("position_mse")?, col("orientation_mse")?, col("failed")?);
        let (mut p, mut o, mut n, mut failed) = (0.0, 0.0, 0usize, false);
        for rec in rdr.records() {
            let rec = rec.map_err(output::csv_err(&path))?;
            let num = |k: usize| {
                rec[k].parse::<f64>().map_err(|e| HarnessError::Csv { path: path.clone(), message: e.to_string() })
            };
            p += num(cp)?;
            o += num(co)?;
            failed |= &rec[cf] == "true";
            n += 1;
        }
        if n == 0 {
            continue;
        }
        let grid = GridPoint { horizon: cfg.nmpc.horizon, dt: cfg.nmpc.dt, alpha: cfg.nmpc.alpha };
        samples.push((grid, p / n as f64, o / n as f64, failed));
    }
    let rows = aggregate(&samples);
    write_table(&rows, &root.join("report.csv"))?;
    Ok(rows)
}
