//! Built-in scenarios and the parallel batch runner.

use super::metrics::MetricsSummary;
use super::output::{create, csv_err, summary_rows, write_run, SUMMARY_HEADER};
use super::run::run_traced;
use super::scenario::{
    ChaserSpec, EstimatorMode, EventSchedule, LayoutSpec, Mode, PlanarSpec, ReferenceChange, ScenarioConfig,
    TargetChange, TargetSpec, SCHEMA_VERSION,
};
use super::{derive_seed, HarnessError};
use crate::dynamics::{InertialParams, RigidState};
use crate::estimation::CombinerConfig;
use crate::nmpc::{reference_pose, DockEvent, DockingSchedule, FormationOffset, NmpcConfig};
use crate::spatial::{quat_multiply, Quat, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Linear velocity of the tumbling target (m/s, world frame).
pub const TARGET_VELOCITY: [f64; 3] = [0.015, 0.0075, 0.03];
/// Angular velocity of the tumbling target (rad/s, body frame).
pub const TARGET_ANGULAR_VELOCITY: [f64; 3] = [0.015, 0.045, 0.03];
/// Repetitions per sweep point.
pub const SWEEP_REPS: u32 = 3;
/// Standoff of the orbital formation offsets (m).
pub const STANDOFF: f64 = 1.5;

/// One (T, dt, α) row of the horizon/timestep/falloff sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub horizon: f64,
    pub dt: f64,
    pub alpha: f64,
}

impl GridPoint {
    pub const BASELINE: GridPoint = GridPoint { horizon: 3.0, dt: 0.1, alpha: 0.0 };

    pub fn label(&self) -> String {
        format!("T{}_dt{}_a{}", self.horizon, fmt_dt(self.dt), self.alpha)
    }
}

fn fmt_dt(dt: f64) -> String {
    let inv = 1.0 / dt;
    if (inv - inv.round()).abs() < 1e-9 && inv.round() != 10.0 {
        format!("1o{}", inv.round())
    } else {
        format!("{dt}")
    }
}

/// Baseline plus one-factor-at-a-time variations of horizon, timestep and
/// falloff, and the combined short-step/falloff row.
pub fn sweep_grid() -> Vec<GridPoint> {
    let g = |horizon, dt, alpha| GridPoint { horizon, dt, alpha };
    vec![
        g(3.0, 0.1, 0.0),
        g(0.5, 0.1, 0.0),
        g(10.0, 0.1, 0.0),
        g(3.0, 1.0 / 5.0, 0.0),
        g(3.0, 1.0 / 30.0, 0.0),
        g(3.0, 0.1, 0.1),
        g(3.0, 0.1, 0.3),
        g(3.0, 0.1, 0.6),
        g(3.0, 1.0 / 30.0, 0.3),
    ]
}

/// A scenario placed in a batch: the group it aggregates under, its
/// repetition index and (for sweep runs) its grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub group: String,
    pub rep: u32,
    pub grid: Option<GridPoint>,
    pub scenario: ScenarioConfig,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn orbital_target() -> RigidState {
    RigidState { p: Vec3::zeros(), q: Quat::IDENTITY, v: v3(TARGET_VELOCITY), w: v3(TARGET_ANGULAR_VELOCITY) }
}

/// Chaser displaced from its reference by `dp` (world) and rotated by the
/// rotation vector `dr` (body), at rest.
pub fn displaced_start(target: &RigidState, offset: &FormationOffset, dp: Vec3, dr: Vec3) -> RigidState {
    let (p, q) = reference_pose(target, offset);
    RigidState::at_rest(p + dp, quat_multiply(q, Quat::from_rotation_vector(dr)).normalized())
}

// Initial displacement from the reference: ~0.6 m and ~10°, keeping the
// target in view.
const START_DP: [f64; 3] = [0.5, -0.25, 0.2];
const START_DR: [f64; 3] = [0.1, -0.1, 0.1];

fn orbital_scenario(name: &str, duration: f64, target: RigidState, offsets: &[FormationOffset]) -> ScenarioConfig {
    let chasers = offsets
        .iter()
        .enumerate()
        .map(|(i, off)| {
            // Alternate the displacement direction so chasers don't start alike.
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            ChaserSpec {
                initial: displaced_start(&target, off, v3(START_DP) * s, v3(START_DR) * s),
                offset: *off,
                camera: Default::default(),
            }
        })
        .collect();
    ScenarioConfig {
        version: SCHEMA_VERSION,
        name: name.to_string(),
        mode: Mode::Orbital,
        estimator: EstimatorMode::Vision,
        duration,
        control_rate: None,
        physics_substep: 1e-3,
        seed: 0,
        failure_bound: 5.0,
        target: TargetSpec { initial: target, layout: LayoutSpec::Cube { cube_side: 0.3, marker_side: 0.24 } },
        chasers,
        model: InertialParams::default(),
        events: EventSchedule::default(),
        nmpc: NmpcConfig::default(),
        combiner: CombinerConfig::default(),
        planar: None,
        base_dir: None,
    }
}

/// Single chaser tracking the tumbling target for 120 s.
pub fn single_chaser(point: GridPoint) -> ScenarioConfig {
    let base = orbital_scenario(
        "sweep",
        120.0,
        orbital_target(),
        &[FormationOffset::facing_target(Vec3::new(-STANDOFF, 0.0, 0.0))],
    );
    at_grid_point(&base, point)
}

/// `base` with the grid point's horizon, step and falloff, named
/// `{base}_{label}`.
pub fn at_grid_point(base: &ScenarioConfig, point: GridPoint) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.name = format!("{}_{}", base.name, point.label());
    cfg.nmpc.horizon = point.horizon;
    cfg.nmpc.dt = point.dt;
    cfg.nmpc.alpha = point.alpha;
    cfg
}

/// Two chasers sharing their estimates while tracking.
pub fn two_chaser_tracking() -> ScenarioConfig {
    orbital_scenario(
        "two_chaser_tracking",
        120.0,
        orbital_target(),
        &[
            FormationOffset::facing_target(Vec3::new(-STANDOFF, 0.0, 0.0)),
            FormationOffset::facing_target(Vec3::new(0.0, -STANDOFF, 0.0)),
        ],
    )
}

/// Four-chaser formation; chasers 0 and 3 dock at 60 s.
pub fn four_chaser_docking() -> ScenarioConfig {
    let s = STANDOFF;
    let mut cfg = orbital_scenario(
        "four_chaser_docking",
        120.0,
        orbital_target(),
        &[
            FormationOffset::facing_target(Vec3::new(-s, 0.0, 0.0)),
            FormationOffset::facing_target(Vec3::new(0.0, -s, 0.0)),
            FormationOffset::facing_target(Vec3::new(0.0, s, 0.0)),
            FormationOffset::facing_target(Vec3::new(s, 0.0, 0.0)),
        ],
    );
    cfg.events.docking = DockingSchedule {
        events: vec![DockEvent { time: 60.0, chasers: vec![0, 3] }],
        ramp: 30.0,
        s_final: DOCKED_STANDOFF / s,
    };
    cfg
}

/// Final center distance of the docked orbital chasers (m).
pub const DOCKED_STANDOFF: f64 = 0.5;
/// Time at which chaser 0's reference flips sides in the avoidance run.
pub const FLIP_TIME: f64 = 20.0;

/// Static target; chaser 0's reference flips to the far side, forcing a
/// pass around the keep-out sphere, while chaser 1 holds and observes.
pub fn collision_avoidance() -> ScenarioConfig {
    let target = RigidState::default();
    let near = FormationOffset::facing_target(Vec3::new(STANDOFF, 0.0, 0.15));
    let far = FormationOffset::facing_target(Vec3::new(-STANDOFF, 0.0, 0.15));
    let observer = FormationOffset::facing_target(Vec3::new(0.0, -STANDOFF, 0.0));
    let mut cfg = orbital_scenario("collision_avoidance", 60.0, target, &[near, observer]);
    for c in &mut cfg.chasers {
        let (p, q) = reference_pose(&target, &c.offset);
        c.initial = RigidState::at_rest(p, q);
    }
    cfg.events.reference_changes = vec![ReferenceChange { time: FLIP_TIME, chaser: 0, offset: far }];
    cfg
}

/// Slider final docking distance (m) and initial standoff.
pub const SLIDER_DOCKING_DISTANCE: f64 = 0.2;
pub const SLIDER_STANDOFF: f64 = 0.6;

/// Planar air-bearing docking against a box target.
pub fn slider_docking(moving: bool, estimator: EstimatorMode) -> ScenarioConfig {
    let mut target = RigidState::default();
    let mut target_changes = Vec::new();
    if moving {
        target.v = Vec3::new(0.02, 0.01, 0.0);
        target.w = Vec3::new(0.0, 0.0, 0.03);
        target_changes.push(TargetChange { time: 10.0, v: Vec3::zeros(), w: Vec3::zeros() });
    }
    let offset = FormationOffset::facing_target(Vec3::new(-SLIDER_STANDOFF, 0.0, 0.0));
    let initial = displaced_start(&target, &offset, Vec3::new(-0.25, 0.2, 0.0), Vec3::new(0.0, 0.0, 0.2));
    let name = format!(
        "slider_{}_{}",
        if moving { "moving" } else { "stationary" },
        match estimator {
            EstimatorMode::Vision => "vision",
            EstimatorMode::GroundTruth => "ground_truth",
        }
    );
    ScenarioConfig {
        version: SCHEMA_VERSION,
        name,
        mode: Mode::Planar,
        estimator,
        duration: 60.0,
        control_rate: None,
        physics_substep: 1e-3,
        seed: 0,
        failure_bound: 5.0,
        target: TargetSpec { initial: target, layout: LayoutSpec::PlanarBox { side: 0.12, marker_side: 0.08 } },
        chasers: vec![ChaserSpec { initial, offset, camera: Default::default() }],
        model: InertialParams::slider(),
        events: EventSchedule {
            docking: DockingSchedule {
                events: vec![DockEvent { time: 20.0, chasers: vec![0] }],
                ramp: 20.0,
                s_final: SLIDER_DOCKING_DISTANCE / SLIDER_STANDOFF,
            },
            target_changes,
            ..Default::default()
        },
        nmpc: NmpcConfig::slider(),
        combiner: CombinerConfig::default(),
        planar: Some(PlanarSpec::default()),
        base_dir: None,
    }
}

fn placed(mut scenario: ScenarioConfig, master: u64, seed_key: &str, rep: u32, grid: Option<GridPoint>) -> SuiteRun {
    let group = scenario.name.clone();
    scenario.seed = derive_seed(master, seed_key, &[rep as u64]);
    scenario.name = format!("{group}_r{rep}");
    SuiteRun { group, rep, grid, scenario }
}

/// The sweep, every grid point repeated [`SWEEP_REPS`] times. Repetition
/// `r` uses the same seed at every grid point so trends compare like with
/// like.
pub fn sweep(master: u64) -> Vec<SuiteRun> {
    sweep_grid()
        .into_iter()
        .flat_map(|g| (0..SWEEP_REPS).map(move |r| placed(single_chaser(g), master, "sweep", r, Some(g))))
        .collect()
}

/// The sweep grid applied to an arbitrary base scenario.
pub fn sweep_from(base: &ScenarioConfig, master: u64) -> Vec<SuiteRun> {
    sweep_grid()
        .into_iter()
        .flat_map(|g| (0..SWEEP_REPS).map(move |r| placed(at_grid_point(base, g), master, &base.name, r, Some(g))))
        .collect()
}

/// Every built-in scenario: the sweep, multi-chaser tracking, docking,
/// collision avoidance and the four planar docking variants.
pub fn scenario_suite(master: u64) -> Vec<SuiteRun> {
    let mut runs = sweep(master);
    let mut others = vec![two_chaser_tracking(), four_chaser_docking(), collision_avoidance()];
    for moving in [false, true] {
        for est in [EstimatorMode::GroundTruth, EstimatorMode::Vision] {
            others.push(slider_docking(moving, est));
        }
    }
    for s in others {
        let key = s.name.clone();
        runs.push(placed(s, master, &key, 0, None));
    }
    runs
}

/// Result of one batch entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub name: String,
    pub group: String,
    pub rep: u32,
    pub grid: Option<GridPoint>,
    pub seed: u64,
    pub chasers: usize,
    pub metrics: Option<MetricsSummary>,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.metrics.as_ref().is_none_or(|m| m.failed)
    }
}

/// Run one scenario and write its logs (plus the resolved scenario file)
/// into `dir`. A divergence is recorded in the summary rather than
/// propagated; configuration and I/O errors are returned.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path, trace: bool) -> Result<(Option<MetricsSummary>, Option<String>), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), source: e })?;
    cfg.save(&dir.join("scenario.toml"))?;
    match run_traced(cfg, trace) {
        Ok(log) => Ok((write_run(&log, dir)?, None)),
        Err(e @ HarnessError::Diverged { .. }) => {
            let msg = e.to_string();
            let path = dir.join("summary.csv");
            let mut w = create(&path)?;
            w.write_record(SUMMARY_HEADER).map_err(csv_err(&path))?;
            for i in 0..cfg.chasers.len() {
                let mut row = vec![cfg.name.clone(), cfg.seed.to_string(), i.to_string()];
                row.extend(std::iter::repeat_n("NaN".to_string(), 7));
                row.push("true".into());
                w.write_record(&row).map_err(csv_err(&path))?;
            }
            w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            std::fs::write(dir.join("error.txt"), format!("{msg}\n"))
                .map_err(|e| HarnessError::Io { path: dir.join("error.txt"), source: e })?;
            Ok((None, Some(msg)))
        }
        Err(e) => Err(e),
    }
}

/// Execute a batch on `jobs` worker threads (0 = all cores), one output
/// directory per run under `out`, then write the aggregate tables.
pub fn run_batch(runs: &[SuiteRun], out: &Path, jobs: usize, trace: bool) -> Result<Vec<RunOutcome>, HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Io { path: out.to_path_buf(), source: e })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunOutcome, HarnessError>> = pool.install(|| {
        runs.par_iter()
            .map(|r| {
                let (metrics, error) = run_to_dir(&r.scenario, &out.join(&r.scenario.name), trace)?;
                Ok(RunOutcome {
                    name: r.scenario.name.clone(),
                    group: r.group.clone(),
                    rep: r.rep,
                    grid: r.grid,
                    seed: r.scenario.seed,
                    chasers: r.scenario.chasers.len(),
                    metrics,
                    error,
                })
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_batch_tables(&outcomes, out)?;
    Ok(outcomes)
}

/// Columns of the horizon/timestep/falloff table.
pub const TABLE_HEADER: &[&str] = &["T", "dt", "alpha", "position_mse", "orientation_mse", "failures"];

/// One aggregated row: mean MSEs over the repetitions that did not fail.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub grid: GridPoint,
    pub position_mse: f64,
    pub orientation_mse: f64,
    pub failures: usize,
    pub runs: usize,
}

impl TableRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            format!("{}", self.grid.horizon),
            format!("{}", self.grid.dt),
            format!("{}", self.grid.alpha),
            format!("{}", self.position_mse),
            format!("{}", self.orientation_mse),
            format!("{}/{}", self.failures, self.runs),
        ]
    }
}

/// Per-run (T, dt, α, position MSE, orientation MSE, failed) samples.
pub type RunSample = (GridPoint, f64, f64, bool);

/// Aggregate samples by grid point, ordered by (T, dt, α).
pub fn aggregate(samples: &[RunSample]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = Vec::new();
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for (g, p, o, failed) in samples {
        let k = match rows.iter().position(|r| r.grid == *g) {
            Some(k) => k,
            None => {
                rows.push(TableRow { grid: *g, position_mse: f64::NAN, orientation_mse: f64::NAN, failures: 0, runs: 0 });
                sums.push((0.0, 0.0, 0));
                rows.len() - 1
            }
        };
        rows[k].runs += 1;
        if *failed {
            rows[k].failures += 1;
        } else {
            sums[k].0 += p;
            sums[k].1 += o;
            sums[k].2 += 1;
        }
    }
    for (r, (p, o, n)) in rows.iter_mut().zip(sums) {
        if n > 0 {
            r.position_mse = p / n as f64;
            r.orientation_mse = o / n as f64;
        }
    }
    rows.sort_by(|a, b| {
        (a.grid.horizon, a.grid.dt, a.grid.alpha)
            .partial_cmp(&(b.grid.horizon, b.grid.dt, b.grid.alpha))
            .expect("finite grid values")
    });
    rows
}

pub fn write_table(rows: &[TableRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_record(TABLE_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
}

fn outcome_sample(o: &RunOutcome) -> Option<RunSample> {
    let g = o.grid?;
    let (p, q) = o.metrics.as_ref().map_or((f64::NAN, f64::NAN), |m| (m.mean_position_mse(), m.mean_orientation_mse()));
    Some((g, p, q, o.failed()))
}

/// `suite_summary.csv` (per run and chaser) and, when the batch holds sweep
/// runs, `sweep_runs.csv` and `sweep_summary.csv`.
pub fn write_batch_tables(outcomes: &[RunOutcome], out: &Path) -> Result<(), HarnessError> {
    let path = out.join("suite_summary.csv");
    let mut w = create(&path)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(&path))?;
    for o in outcomes {
        match &o.metrics {
            Some(m) => {
                for row in summary_rows(&o.name, o.seed, m) {
                    w.write_record(&row).map_err(csv_err(&path))?;
                }
            }
            None => {
                for i in 0..o.chasers {
                    let mut row = vec![o.name.clone(), o.seed.to_string(), i.to_string()];
                    row.extend(std::iter::repeat_n("NaN".to_string(), 7));
                    row.push("true".into());
                    w.write_record(&row).map_err(csv_err(&path))?;
                }
            }
        }
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;

    let samples: Vec<RunSample> = outcomes.iter().filter_map(outcome_sample).collect();
    if samples.is_empty() {
        return Ok(());
    }
    let path = out.join("sweep_runs.csv");
    let mut w = create(&path)?;
    w.write_record(["T", "dt", "alpha", "rep", "seed", "position_mse", "orientation_mse", "failed"])
        .map_err(csv_err(&path))?;
    for o in outcomes {
        if let Some((g, p, q, failed)) = outcome_sample(o) {
            w.write_record([
                format!("{}", g.horizon),
                format!("{}", g.dt),
                format!("{}", g.alpha),
                o.rep.to_string(),
                o.seed.to_string(),
                format!("{p}"),
                format!("{q}"),
                failed.to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    write_table(&aggregate(&samples), &out.join("sweep_summary.csv"))
}
