//! CSV log writers. Headers are always written, so an empty run still
//! produces well-formed (header-only) files. Wall-clock timing lives in its
//! own file so every other output is reproducible byte for byte.

use super::metrics::{compute_metrics, MetricsSummary};
use super::run::RunLog;
use super::HarnessError;
use crate::dynamics::RigidState;
use crate::spatial::{quat_error, quat_to_angle, Quat, Vec3};
use std::fs::File;
use std::path::{Path, PathBuf};

type Writer = csv::Writer<File>;

pub const RUN_FILES: &[&str] = &[
    "trajectory.csv",
    "errors.csv",
    "docking.csv",
    "target_estimate.csv",
    "commands.csv",
    "solver.csv",
    "timing.csv",
    "summary.csv",
];

pub const SUMMARY_HEADER: &[&str] = &[
    "scenario",
    "seed",
    "chaser",
    "position_mse",
    "orientation_mse",
    "min_target_distance",
    "min_inter_chaser_distance",
    "final_docking_distance",
    "final_reference_error",
    "max_position_error",
    "failed",
];

pub(crate) fn create(path: &Path) -> Result<Writer, HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    Ok(csv::Writer::from_writer(f))
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn state_fields(s: &RigidState) -> Vec<String> {
    let mut v: Vec<String> = Vec::with_capacity(13);
    v.extend(s.p.iter().map(|x| f(*x)));
    v.extend(s.q.to_array().iter().map(|x| f(*x)));
    v.extend(s.v.iter().map(|x| f(*x)));
    v.extend(s.w.iter().map(|x| f(*x)));
    v
}

fn pose_fields(p: &Vec3, q: &Quat) -> Vec<String> {
    p.iter().chain(q.to_array().iter()).map(|x| f(*x)).collect()
}

const STATE_COLS: [&str; 13] = ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"];

struct Table {
    path: PathBuf,
    w: Writer,
}

impl Table {
    fn new(dir: &Path, name: &str, header: &[&str]) -> Result<Self, HarnessError> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        w.write_record(header).map_err(csv_err(&path))?;
        Ok(Self { path, w })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<(), HarnessError> {
        self.w.write_record(&fields).map_err(csv_err(&self.path))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.w.flush().map_err(|e| HarnessError::Io { path: self.path.clone(), source: e })
    }
}

fn header(prefix: &[&str], rest: &[&str]) -> Vec<String> {
    prefix.iter().chain(rest).map(|s| s.to_string()).collect()
}

fn table(dir: &Path, name: &str, cols: Vec<String>) -> Result<Table, HarnessError> {
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    Table::new(dir, name, &refs)
}

/// Write every per-run CSV into `dir` (created if missing) and return the
/// metrics, `None` for an empty log.
pub fn write_run(log: &RunLog, dir: &Path) -> Result<Option<MetricsSummary>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), source: e })?;

    let mut traj = table(dir, "trajectory.csv", header(&["time", "body"], &STATE_COLS))?;
    let mut errors = table(
        dir,
        "errors.csv",
        header(
            &["time", "chaser", "position_error", "orientation_error"],
            &["ref_px", "ref_py", "ref_pz", "ref_qw", "ref_qx", "ref_qy", "ref_qz"],
        ),
    )?;
    let mut docking = table(
        dir,
        "docking.csv",
        header(&["time", "chaser", "s_dock", "target_distance", "reference_distance"], &[]),
    )?;
    let mut est = table(
        dir,
        "target_estimate.csv",
        header(&["time", "health", "contributors"], &STATE_COLS)
            .into_iter()
            .chain(["position_error".to_string(), "orientation_error".to_string()])
            .collect(),
    )?;
    let mut cmds = table(
        dir,
        "commands.csv",
        header(&["time", "chaser", "fx", "fy", "fz", "tx", "ty", "tz", "corners", "sighted", "pnp_rms"], &[]),
    )?;
    let mut solver = table(
        dir,
        "solver.csv",
        header(
            &[
                "time",
                "status",
                "cost",
                "max_residual",
                "inner_iterations",
                "outer_iterations",
                "penalty",
                "gradient_norm",
                "message",
            ],
            &[],
        ),
    )?;
    let mut timing = table(dir, "timing.csv", header(&["time", "solve_seconds"], &[]))?;
    let mut pwm = if log.thrusters > 0 {
        let duty: Vec<String> = (0..log.thrusters).map(|k| format!("duty{k}")).collect();
        let mut cols = header(
            &["time", "chaser", "req_fx", "req_fy", "req_tz", "ach_fx", "ach_fy", "ach_tz", "saturated"],
            &[],
        );
        cols.extend(duty);
        Some(table(dir, "pwm.csv", cols)?)
    } else {
        None
    };

    for tick in &log.ticks {
        let t = f(tick.time);
        traj.row([vec![t.clone(), "target".into()], state_fields(&tick.target)].concat())?;
        for (i, c) in tick.chasers.iter().enumerate() {
            traj.row([vec![t.clone(), format!("chaser{i}")], state_fields(&c.truth)].concat())?;
            let e = (c.reference.0 - c.truth.p).norm();
            let a = quat_to_angle(quat_error(c.truth.q, c.reference.1));
            errors.row([vec![t.clone(), i.to_string(), f(e), f(a)], pose_fields(&c.reference.0, &c.reference.1)].concat())?;
            docking.row(vec![
                t.clone(),
                i.to_string(),
                f(c.s_dock),
                f((c.truth.p - tick.target.p).norm()),
                f((c.truth.p - c.scaled_reference.0).norm()),
            ])?;
            let u = c.command.to_array();
            let mut row = vec![t.clone(), i.to_string()];
            row.extend(u.iter().map(|x| f(*x)));
            row.extend([c.corners.to_string(), (c.sighted as u8).to_string(), f(c.pnp_rms)]);
            cmds.row(row)?;
        }
        let contributors = tick.contributors.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        let (fields, pe, ae) = match &tick.target_estimate {
            Some(s) => (
                state_fields(s),
                f((s.p - tick.target.p).norm()),
                f(quat_to_angle(quat_error(s.q, tick.target.q))),
            ),
            None => (vec![String::new(); 13], String::new(), String::new()),
        };
        est.row([vec![t.clone(), tick.health.as_str().to_string(), contributors], fields, vec![pe, ae]].concat())?;
        let s = &tick.solver;
        solver.row(vec![
            t.clone(),
            s.status.as_str().into(),
            f(s.cost),
            f(s.max_residual),
            s.inner_iterations.to_string(),
            s.outer_iterations.to_string(),
            f(s.penalty),
            f(s.gradient_norm),
            s.message.clone(),
        ])?;
        timing.row(vec![t.clone(), f(tick.wall_time)])?;
        if let Some(p) = pwm.as_mut() {
            for (i, r) in tick.pwm.iter().enumerate() {
                let mut row = vec![t.clone(), i.to_string()];
                row.extend(r.requested.iter().chain(r.achieved.iter()).map(|x| f(*x)));
                row.push((r.saturated as u8).to_string());
                row.extend(r.duty.iter().map(|x| f(*x)));
                p.row(row)?;
            }
        }
    }
    for t in [traj, errors, docking, est, cmds, solver, timing] {
        t.finish()?;
    }
    if let Some(p) = pwm {
        p.finish()?;
    }

    if !log.traces.is_empty() {
        let mut tr = table(
            dir,
            "trace.csv",
            header(&["tick", "outer", "iteration", "penalty", "cost", "envelope", "residual", "gamma", "tau"], &[]),
        )?;
        for (k, rows) in &log.traces {
            for r in rows {
                tr.row(vec![
                    k.to_string(),
                    r.outer.to_string(),
                    r.iteration.to_string(),
                    f(r.penalty),
                    f(r.cost),
                    f(r.envelope),
                    f(r.residual),
                    f(r.gamma),
                    f(r.tau),
                ])?;
            }
        }
        tr.finish()?;
    }

    let metrics = compute_metrics(log);
    let mut summary = Table::new(dir, "summary.csv", SUMMARY_HEADER)?;
    if let Some(m) = &metrics {
        for row in summary_rows(&log.name, log.seed, m) {
            summary.row(row)?;
        }
    }
    summary.finish()?;
    Ok(metrics)
}

pub fn summary_rows(name: &str, seed: u64, m: &MetricsSummary) -> Vec<Vec<String>> {
    m.chasers
        .iter()
        .map(|c| {
            vec![
                name.to_string(),
                seed.to_string(),
                c.chaser.to_string(),
                f(c.position_mse),
                f(c.orientation_mse),
                f(c.min_target_distance),
                f(c.min_inter_chaser_distance),
                f(c.final_docking_distance),
                f(c.final_reference_error),
                f(c.max_position_error),
                c.failed.to_string(),
            ]
        })
        .collect()
}
