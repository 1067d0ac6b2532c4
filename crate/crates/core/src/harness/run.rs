//! The closed loop: truth propagation, synthetic vision, fusion, NMPC and
//! (planar) thruster allocation, one control tick at a time.

use super::scenario::{EstimatorMode, Mode, ScenarioConfig};
use super::{derive_seed, HarnessError};
use crate::allocation::{allocate, to_pwm, PlanarWrench, ThrusterLayout};
use crate::dynamics::{propagate_chaser, propagate_target, PlanarMask, RigidState, Wrench};
use crate::estimation::{EstimationCombiner, Health, WorldEstimate};
use crate::nmpc::{reference_pose, FormationOffset, HorizonInput, NmpcController};
use crate::solver::TraceRow;
use crate::spatial::{Quat, Vec3};
use crate::vision::{camera_pose, observe, solve_pnp};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct ChaserRecord {
    pub truth: RigidState,
    /// Reference with the full (unscaled) formation offset.
    pub reference: (Vec3, Quat),
    /// Reference with the docking scale applied.
    pub scaled_reference: (Vec3, Quat),
    pub s_dock: f64,
    /// Wrench actually applied over the tick (body frame).
    pub command: Wrench,
    /// Corner detections this tick.
    pub corners: usize,
    /// A PnP estimate was produced and submitted.
    pub sighted: bool,
    pub pnp_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Ok,
    /// Iteration cap hit with constraints satisfied.
    Degraded,
    /// Constraint violation above tolerance after the penalty loop.
    Infeasible,
    /// Solver error; the previous command was held.
    Failed,
    /// No target estimate yet; inputs held at zero.
    NoEstimate,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Ok => "ok",
            SolveStatus::Degraded => "degraded",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Failed => "failed",
            SolveStatus::NoEstimate => "no_estimate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverRecord {
    pub status: SolveStatus,
    pub cost: f64,
    pub max_residual: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub penalty: f64,
    pub gradient_norm: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwmRecord {
    pub duty: Vec<f64>,
    pub requested: PlanarWrench,
    pub achieved: PlanarWrench,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time: f64,
    pub target: RigidState,
    /// Target state the controller used (extrapolated to `time`).
    pub target_estimate: Option<RigidState>,
    pub health: Health,
    pub contributors: Vec<usize>,
    pub chasers: Vec<ChaserRecord>,
    pub solver: SolverRecord,
    pub pwm: Vec<PwmRecord>,
    /// Solver wall time (s); nondeterministic, logged separately.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub chasers: usize,
    pub failure_bound: f64,
    /// Thruster count in planar mode, 0 otherwise.
    pub thrusters: usize,
    pub ticks: Vec<TickRecord>,
    /// Per-tick solver iteration traces, kept only when tracing is on.
    pub traces: Vec<(usize, Vec<TraceRow>)>,
}

struct Truth {
    target: RigidState,
    chasers: Vec<RigidState>,
}

impl Truth {
    fn check(&self, t: f64) -> Result<(), HarnessError> {
        if !self.target.is_finite() {
            return Err(HarnessError::Diverged { time: t, what: "target state".into() });
        }
        match self.chasers.iter().position(|c| !c.is_finite()) {
            Some(i) => Err(HarnessError::Diverged { time: t, what: format!("chaser {i} state") }),
            None => Ok(()),
        }
    }
}

/// Execute one scenario with its own seed.
pub fn run(cfg: &ScenarioConfig) -> Result<RunLog, HarnessError> {
    run_traced(cfg, false)
}

pub fn run_traced(cfg: &ScenarioConfig, trace: bool) -> Result<RunLog, HarnessError> {
    cfg.validate()?;
    let base = cfg.base_dir.as_deref();
    let markers = cfg.target.layout.build(base)?;
    let planar = cfg.mode == Mode::Planar;
    let planar_spec = cfg.planar.clone().unwrap_or_default();
    let thrusters: Option<ThrusterLayout> = if planar { Some(planar_spec.build(base)?) } else { None };
    let mask = if planar { PlanarMask::planar() } else { PlanarMask::full() };
    let mut nmpc_cfg = cfg.nmpc.clone();
    nmpc_cfg.solver.trace = trace;
    let mut controller = NmpcController::new(nmpc_cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut combiner = EstimationCombiner::new(cfg.combiner);

    let n = cfg.chasers.len();
    let period = cfg.control_period();
    let h = cfg.physics_substep;
    let mut truth = Truth {
        target: cfg.target.initial,
        chasers: cfg.chasers.iter().map(|c| mask.mask_state(&c.initial)).collect(),
    };
    let mut offsets: Vec<FormationOffset> = cfg.chasers.iter().map(|c| c.offset).collect();
    let mut ref_changes = cfg.events.reference_changes.clone();
    ref_changes.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut tgt_changes = cfg.events.target_changes.clone();
    tgt_changes.sort_by(|a, b| a.time.total_cmp(&b.time));
    let (mut next_ref, mut next_tgt) = (0, 0);
    let mut held = vec![Wrench::zero(); n];

    let ticks = cfg.ticks();
    let mut log = RunLog {
        name: cfg.name.clone(),
        mode: cfg.mode,
        seed: cfg.seed,
        chasers: n,
        failure_bound: cfg.failure_bound,
        thrusters: thrusters.as_ref().map_or(0, |l| l.len()),
        ticks: Vec::with_capacity(ticks),
        traces: Vec::new(),
    };
    truth.check(0.0)?;

    for k in 0..ticks {
        let t = k as f64 * period;
        // Events scheduled before the end of this tick take effect now.
        let horizon = t + 0.5 * period;
        while next_ref < ref_changes.len() && ref_changes[next_ref].time < horizon {
            let c = ref_changes[next_ref];
            offsets[c.chaser] = c.offset;
            next_ref += 1;
        }
        while next_tgt < tgt_changes.len() && tgt_changes[next_tgt].time < horizon {
            truth.target.v = tgt_changes[next_tgt].v;
            truth.target.w = tgt_changes[next_tgt].w;
            next_tgt += 1;
        }

        // Sensing.
        let mut sensing = vec![(0usize, false, f64::NAN); n];
        let (target_estimate, health, contributors) = match cfg.estimator {
            EstimatorMode::GroundTruth => (Some(truth.target), Health::Ok, (0..n).collect()),
            EstimatorMode::Vision => {
                for (i, chaser) in truth.chasers.iter().enumerate() {
                    let cam = camera_pose(chaser.p, chaser.q);
                    let cam_spec = &cfg.chasers[i].camera;
                    let obs_seed = derive_seed(cfg.seed, "observe", &[i as u64, k as u64]);
                    let obs = observe(&cam_spec.intrinsics, &cam, &truth.target, &markers, cam_spec.pixel_noise, obs_seed, t);
                    sensing[i].0 = obs.len();
                    if let Ok(est) = solve_pnp(&cam_spec.intrinsics, &markers, &obs) {
                        let world = est.to_world(&cam);
                        if world.pose.translation.iter().all(|x| x.is_finite()) && world.pose.rotation.is_finite() {
                            combiner.submit(WorldEstimate { chaser: i, pose: world.pose, timestamp: t });
                            sensing[i].1 = true;
                            sensing[i].2 = est.rms_px;
                        }
                    }
                }
                let odom = combiner.update(t);
                let est = match odom.health {
                    Health::NoEstimate => None,
                    _ => Some(propagate_target(&odom.state, (t - odom.timestamp).max(0.0), h)),
                };
                (est, odom.health, odom.contributors)
            }
        };

        // Reference bookkeeping.
        let scaled: Vec<FormationOffset> = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| o.with_scale(o.s_dock * cfg.events.docking.scale(i, t)))
            .collect();

        // Control.
        let started = Instant::now();
        let solver = match target_estimate {
            None => {
                held = vec![Wrench::zero(); n];
                SolverRecord::empty(SolveStatus::NoEstimate, String::new())
            }
            Some(est) => {
                let input = HorizonInput {
                    target: est,
                    chasers: &truth.chasers,
                    offsets: &scaled,
                    model: cfg.model,
                    planar,
                };
                match controller.step(&input) {
                    Ok(plan) => {
                        held = plan.first_inputs();
                        if trace {
                            log.traces.push((k, plan.report.trace.clone()));
                        }
                        let status = if plan.infeasible {
                            SolveStatus::Infeasible
                        } else if plan.degraded {
                            SolveStatus::Degraded
                        } else {
                            SolveStatus::Ok
                        };
                        SolverRecord {
                            status,
                            cost: plan.cost,
                            max_residual: plan.max_residual(),
                            inner_iterations: plan.report.inner_iterations,
                            outer_iterations: plan.report.outer_iterations,
                            penalty: plan.report.penalty,
                            gradient_norm: plan.report.gradient_norm,
                            message: String::new(),
                        }
                    }
                    Err(e) => {
                        controller.reset();
                        SolverRecord::empty(SolveStatus::Failed, e.to_string())
                    }
                }
            }
        };
        let wall_time = started.elapsed().as_secs_f64();

        // Actuation.
        let mut pwm = Vec::new();
        let applied: Vec<Wrench> = match &thrusters {
            None => held.clone(),
            Some(layout) => held
                .iter()
                .map(|u| {
                    let request = PlanarWrench::new(u.force.x, u.force.y, u.torque.z);
                    let (duty, achieved, saturated) = match allocate(&request, layout) {
                        Ok(a) => {
                            let cmd = to_pwm(&a.thrusts, layout, planar_spec.pwm_period, planar_spec.min_on_time);
                            let mean = cmd.mean_thrusts(layout);
                            let b = layout.effectiveness();
                            let w = &b * nalgebra::DVector::from_vec(mean);
                            (cmd.duty, PlanarWrench::new(w[0], w[1], w[2]), a.saturated)
                        }
                        Err(_) => (vec![0.0; layout.len()], PlanarWrench::zeros(), true),
                    };
                    pwm.push(PwmRecord { duty, requested: request, achieved, saturated });
                    Wrench::new(Vec3::new(achieved.x, achieved.y, 0.0), Vec3::new(0.0, 0.0, achieved.z))
                })
                .collect(),
        };

        log.ticks.push(TickRecord {
            time: t,
            target: truth.target,
            target_estimate,
            health,
            contributors,
            chasers: (0..n)
                .map(|i| ChaserRecord {
                    truth: truth.chasers[i],
                    reference: reference_pose(&truth.target, &offsets[i]),
                    scaled_reference: reference_pose(&truth.target, &scaled[i]),
                    s_dock: scaled[i].s_dock,
                    command: applied[i],
                    corners: sensing[i].0,
                    sighted: sensing[i].1,
                    pnp_rms: sensing[i].2,
                })
                .collect(),
            solver,
            pwm,
            wall_time,
        });

        // Truth propagation over the tick.
        let accel_bias = if planar { planar_spec.disturbance_accel } else { Vec3::zeros() };
        for (i, chaser) in truth.chasers.iter_mut().enumerate() {
            let mut accel = accel_bias;
            let mut u = applied[i];
            for d in cfg.events.disturbances.iter().filter(|d| d.chaser == i && d.time <= t && t < d.time + d.duration) {
                accel += d.force / cfg.model.mass;
                u.torque += d.torque;
            }
            *chaser = propagate_chaser(chaser, &u, &cfg.model, &mask, accel, period, h)
                .map_err(|e| HarnessError::Diverged { time: t, what: format!("chaser {i}: {e}") })?;
        }
        truth.target = propagate_target(&truth.target, period, h);
        truth.check(t + period)?;
    }
    Ok(log)
}

impl SolverRecord {
    fn empty(status: SolveStatus, message: String) -> Self {
        Self {
            status,
            cost: f64::NAN,
            max_residual: f64::NAN,
            inner_iterations: 0,
            outer_iterations: 0,
            penalty: f64::NAN,
            gradient_norm: f64::NAN,
            message,
        }
    }
}
