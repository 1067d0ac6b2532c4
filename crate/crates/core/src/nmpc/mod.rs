//! Centralized receding-horizon controller for a chaser formation.
//!
//! All chasers' input sequences are stacked into one decision vector,
//! laid out chaser-major then step-major: `z[(i·D + j)·6 + k]` with
//! `k` indexing `(F_x, F_y, F_z, τ_x, τ_y, τ_z)` in the chaser body frame.

mod problem;

pub use problem::{ConstraintSet, HorizonProblem};

use crate::dynamics::{propagate_target, InertialParams, RigidState, Wrench};
use crate::solver::{self, DecisionVector, SolveReport, SolverConfig, SolverError};
use crate::spatial::{quat_error, quat_multiply, rotate_vector, Quat, Vec3};
use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("chaser count mismatch: {states} states, {offsets} offsets")]
    Shape { states: usize, offsets: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmpcConfig {
    /// Prediction horizon T (s).
    pub horizon: f64,
    /// Prediction step dt (s).
    pub dt: f64,
    /// Falloff fraction α ∈ [0, 1).
    pub alpha: f64,
    #[serde(with = "crate::serde_mat::mat3")]
    pub q_p: Matrix3<f64>,
    #[serde(with = "crate::serde_mat::mat4")]
    pub q_q: Matrix4<f64>,
    #[serde(with = "crate::serde_mat::mat6")]
    pub q_u: Matrix6<f64>,
    #[serde(with = "crate::serde_mat::mat3")]
    pub q_f_p: Matrix3<f64>,
    #[serde(with = "crate::serde_mat::mat4")]
    pub q_f_q: Matrix4<f64>,
    pub f_max: f64,
    pub tau_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub u_ref: [f64; 6],
    pub solver: SolverConfig,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            dt: 0.1,
            alpha: 0.0,
            q_p: Matrix3::identity() * 65.0,
            q_q: Matrix4::identity() * 35.0,
            q_u: Matrix6::from_diagonal(&nalgebra::Vector6::new(3.5, 3.5, 3.5, 40.0, 40.0, 40.0)),
            q_f_p: Matrix3::identity() * 3250.0,
            q_f_q: Matrix4::identity() * 1750.0,
            f_max: 1.0,
            tau_max: 0.5,
            d_min: 0.35,
            d_max: 4.0,
            u_ref: [0.0; 6],
            solver: SolverConfig::default(),
        }
    }
}

fn is_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return false;
    }
    nalgebra::DMatrix::from_column_slice(N, N, m.as_slice()).symmetric_eigenvalues().iter().all(|&e| e >= -1e-12)
}

impl NmpcConfig {
    /// Slider limits: planar force and torque bounds of the air-bearing
    /// platform.
    pub fn slider() -> Self {
        Self { f_max: 1.4, tau_max: 0.392, ..Self::default() }
    }

    /// Number of prediction steps D = T / dt.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let err = |m: &str| Err(NmpcError::Config(m.to_string()));
        if !(self.horizon > 0.0 && self.dt > 0.0) {
            return err("horizon and step must be positive");
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return err("horizon must be an integer multiple of the step");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return err("falloff must lie in [0, 1)");
        }
        if !(is_psd(&self.q_p) && is_psd(&self.q_q) && is_psd(&self.q_u) && is_psd(&self.q_f_p) && is_psd(&self.q_f_q))
        {
            return err("weights must be symmetric positive semidefinite");
        }
        if !(self.f_max >= 0.0 && self.tau_max >= 0.0) {
            return err("input bounds must be non-negative");
        }
        if !(self.d_min > 0.0 && self.d_max > self.d_min) {
            return err("distance limits need 0 < d_min < d_max");
        }
        if self.u_ref.iter().any(|u| !u.is_finite()) {
            return err("steady-state input must be finite");
        }
        self.solver.validate().map_err(NmpcError::Config)
    }

    /// Multiply every weight by `k`.
    pub fn scaled_weights(&self, k: f64) -> Self {
        Self {
            q_p: self.q_p * k,
            q_q: self.q_q * k,
            q_u: self.q_u * k,
            q_f_p: self.q_f_p * k,
            q_f_q: self.q_f_q * k,
            ..self.clone()
        }
    }
}

/// Pose of a chaser's reference in the target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationOffset {
    pub p_off: Vec3,
    pub q_off: Quat,
    /// Approach scale in (0, 1]; 1 holds the full offset.
    #[serde(default = "one")]
    pub s_dock: f64,
}

fn one() -> f64 {
    1.0
}

impl FormationOffset {
    pub fn new(p_off: Vec3, q_off: Quat) -> Self {
        Self { p_off, q_off, s_dock: 1.0 }
    }

    /// Offset whose chaser sits at `p_off` and faces the target center with
    /// its body +X axis.
    pub fn facing_target(p_off: Vec3) -> Self {
        let dir = -p_off.normalize();
        let x = Vec3::x();
        let axis = x.cross(&dir);
        let q = if axis.norm() < 1e-12 {
            if x.dot(&dir) > 0.0 {
                Quat::IDENTITY
            } else {
                Quat::from_axis_angle(Vec3::z(), std::f64::consts::PI)
            }
        } else {
            Quat::from_axis_angle(axis, x.dot(&dir).clamp(-1.0, 1.0).acos())
        };
        Self::new(p_off, q)
    }

    pub fn with_scale(mut self, s_dock: f64) -> Self {
        self.s_dock = s_dock;
        self
    }
}

/// Reference pose of a chaser: the (scaled) offset carried by the target.
pub fn reference_pose(target: &RigidState, off: &FormationOffset) -> (Vec3, Quat) {
    let p = target.p + rotate_vector(target.q, off.p_off * off.s_dock);
    (p, quat_multiply(target.q, off.q_off))
}

/// Constant-velocity prediction of the target, `D + 1` states.
pub fn rollout_target(target: &RigidState, cfg: &NmpcConfig) -> Vec<RigidState> {
    let d = cfg.steps();
    let mut out = Vec::with_capacity(d + 1);
    out.push(*target);
    for j in 0..d {
        out.push(propagate_target(&out[j], cfg.dt, cfg.dt));
    }
    out
}

/// Command starting a chaser's approach at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DockEvent {
    pub time: f64,
    pub chasers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DockingSchedule {
    pub events: Vec<DockEvent>,
    /// Ramp duration (s).
    pub ramp: f64,
    /// Scale reached at the end of the ramp.
    pub s_final: f64,
}

impl Default for DockingSchedule {
    fn default() -> Self {
        Self { events: Vec::new(), ramp: 30.0, s_final: 1.0 }
    }
}

impl DockingSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ramp > 0.0) || !(self.s_final > 0.0 && self.s_final <= 1.0) {
            return Err("dock ramp must be positive and final scale in (0, 1]".into());
        }
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err("dock events must be in time order".into());
        }
        Ok(())
    }

    /// Approach scale of `chaser` at time `t`.
    pub fn scale(&self, chaser: usize, t: f64) -> f64 {
        let Some(start) = self.events.iter().find(|e| e.chasers.contains(&chaser)).map(|e| e.time) else {
            return 1.0;
        };
        if t <= start {
            return 1.0;
        }
        let frac = ((t - start) / self.ramp).min(1.0);
        1.0 + (self.s_final - 1.0) * frac
    }

    pub fn is_docking(&self, chaser: usize, t: f64) -> bool {
        self.events.iter().any(|e| e.time <= t && e.chasers.contains(&chaser))
    }
}

/// Per-chaser approach scales at time `t`.
pub fn docking_schedule(schedule: &DockingSchedule, chasers: usize, t: f64) -> Vec<f64> {
    (0..chasers).map(|i| schedule.scale(i, t)).collect()
}

/// Horizon cost of explicit trajectories: `states[i]` holds D + 1 states,
/// `inputs[i]` D wrenches and `references[i]` D + 1 poses.
pub fn evaluate_cost(
    states: &[Vec<RigidState>],
    inputs: &[Vec<Wrench>],
    references: &[Vec<(Vec3, Quat)>],
    cfg: &NmpcConfig,
) -> f64 {
    let d = cfg.steps();
    let id = nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0);
    let mut total = 0.0;
    for i in 0..states.len() {
        for j in 0..=d {
            let x = &states[i][j];
            let (p_ref, q_ref) = references[i][j];
            let ep = p_ref - x.p;
            let e = quat_error(x.q, q_ref);
            let eq = nalgebra::Vector4::new(e.w, e.x, e.y, e.z) - id;
            let fall = 1.0 - cfg.alpha * j as f64 / d as f64;
            total += fall * ((ep.transpose() * cfg.q_p * ep)[0] + (eq.transpose() * cfg.q_q * eq)[0]);
            if j < d {
                let u = nalgebra::Vector6::from_column_slice(&inputs[i][j].to_array())
                    - nalgebra::Vector6::from_column_slice(&cfg.u_ref);
                total += (u.transpose() * cfg.q_u * u)[0];
            } else {
                total += (ep.transpose() * cfg.q_f_p * ep)[0] + (eq.transpose() * cfg.q_f_q * eq)[0];
            }
        }
    }
    total
}

/// Distance-constraint residuals (`≤ 0` when satisfied) for steps `0..=D`,
/// step-major; within a step: target per chaser, pairs `(m < n)`, leash per
/// chaser. Disabled groups are omitted.
pub fn evaluate_constraints(
    states: &[Vec<RigidState>],
    target_positions: &[Vec3],
    references: &[Vec<(Vec3, Quat)>],
    cfg: &NmpcConfig,
    constraints: ConstraintSet,
) -> Vec<f64> {
    let geom = problem::Geometry {
        d_min: cfg.d_min,
        d_max: cfg.d_max,
        constraints,
        target_positions,
        references,
    };
    let mut out = Vec::new();
    for j in 0..target_positions.len() {
        problem::step_residuals(&geom, states, j, &mut out);
    }
    out
}

/// What the controller sees at a tick.
#[derive(Debug, Clone)]
pub struct HorizonInput<'a> {
    /// Target state at the current time.
    pub target: RigidState,
    pub chasers: &'a [RigidState],
    pub offsets: &'a [FormationOffset],
    pub model: InertialParams,
    /// Planar mode: out-of-plane inputs pinned to zero, collision
    /// constraints dropped.
    pub planar: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPlan {
    pub inputs: Vec<Vec<Wrench>>,
    pub states: Vec<Vec<RigidState>>,
    pub target: Vec<RigidState>,
    pub references: Vec<Vec<(Vec3, Quat)>>,
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub report: SolveReport,
    pub decision: Vec<f64>,
    /// Solver hit its iteration cap.
    pub degraded: bool,
    /// Penalized constraints still violated beyond tolerance.
    pub infeasible: bool,
}

impl HorizonPlan {
    /// Command applied now for each chaser.
    pub fn first_inputs(&self) -> Vec<Wrench> {
        self.inputs.iter().map(|u| u[0]).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Decision vector shifted by one step with the last input repeated.
    pub fn shifted_decision(&self) -> Vec<f64> {
        shift(&self.decision, self.inputs.len(), self.inputs.first().map_or(0, |u| u.len()))
    }
}

fn shift(z: &[f64], chasers: usize, steps: usize) -> Vec<f64> {
    let mut out = z.to_vec();
    for i in 0..chasers {
        let base = i * steps * 6;
        out.copy_within(base + 6..base + steps * 6, base);
        if steps > 1 {
            let last = base + (steps - 1) * 6;
            out.copy_within(last - 6..last, last);
        }
    }
    out
}

fn bounds(cfg: &NmpcConfig, n: usize, planar: bool) -> (Vec<f64>, Vec<f64>) {
    let mut hi = [cfg.f_max, cfg.f_max, cfg.f_max, cfg.tau_max, cfg.tau_max, cfg.tau_max];
    if planar {
        hi[2] = 0.0;
        hi[3] = 0.0;
        hi[4] = 0.0;
    }
    let upper: Vec<f64> = hi.iter().copied().cycle().take(n).collect();
    let lower = upper.iter().map(|u| -u).collect();
    (lower, upper)
}

/// Build the horizon problem for one tick.
pub fn build_problem(input: &HorizonInput, cfg: &NmpcConfig) -> Result<(HorizonProblem, Vec<RigidState>), NmpcError> {
    if input.chasers.len() != input.offsets.len() {
        return Err(NmpcError::Shape { states: input.chasers.len(), offsets: input.offsets.len() });
    }
    let target = rollout_target(&input.target, cfg);
    let references: Vec<Vec<(Vec3, Quat)>> = input
        .offsets
        .iter()
        .map(|off| target.iter().map(|t| reference_pose(t, off)).collect())
        .collect();
    let constraints = if input.planar {
        ConstraintSet { target: false, pairs: false, leash: true }
    } else {
        ConstraintSet::all()
    };
    let problem = HorizonProblem::new(
        cfg,
        input.model,
        input.chasers.to_vec(),
        references,
        target.iter().map(|t| t.p).collect(),
        constraints,
    );
    Ok((problem, target))
}

/// Solve one tick. `warm` is a full decision vector (e.g. the previous
/// plan shifted); zeros are used when absent or of the wrong size.
pub fn solve_step(input: &HorizonInput, cfg: &NmpcConfig, warm: Option<&[f64]>) -> Result<HorizonPlan, NmpcError> {
    let (problem, target) = build_problem(input, cfg)?;
    let n = problem_dim(&problem);
    let (lower, upper) = bounds(cfg, n, input.planar);
    let z0 = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![0.0; n],
    };
    let (z, report) = solver::solve(&problem, &DecisionVector::new(z0, lower, upper), &cfg.solver)?;
    let (states, _) = problem.rollout(&z.values)?;
    let d = problem.steps;
    let inputs: Vec<Vec<Wrench>> = (0..problem.chasers())
        .map(|i| (0..d).map(|j| Wrench::from_array(&z.values[(i * d + j) * 6..(i * d + j + 1) * 6])).collect())
        .collect();
    let cost = problem.tracking_cost(&z.values, &states);
    let residuals =
        evaluate_constraints(&states, &problem.target_positions, &problem.references, cfg, problem.constraints);
    let infeasible = report.max_violation >= cfg.solver.constraint_tolerance;
    let degraded = !report.converged && !infeasible;
    Ok(HorizonPlan {
        inputs,
        states,
        target,
        references: problem.references.clone(),
        cost,
        residuals,
        degraded,
        infeasible,
        report,
        decision: z.values,
    })
}

fn problem_dim(p: &HorizonProblem) -> usize {
    6 * p.steps * p.chasers()
}

/// Receding-horizon wrapper that carries the warm start between ticks.
#[derive(Debug, Clone)]
pub struct NmpcController {
    cfg: NmpcConfig,
    warm: Option<Vec<f64>>,
}

impl NmpcController {
    pub fn new(cfg: NmpcConfig) -> Result<Self, NmpcError> {
        cfg.validate()?;
        Ok(Self { cfg, warm: None })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn step(&mut self, input: &HorizonInput) -> Result<HorizonPlan, NmpcError> {
        let plan = solve_step(input, &self.cfg, self.warm.as_deref())?;
        self.warm = Some(plan.shifted_decision());
        Ok(plan)
    }
}
