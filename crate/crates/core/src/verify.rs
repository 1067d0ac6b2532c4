//! Oracle checks run by the `verify` command: each compares a production
//! code path against an independent reference computation.

use crate::allocation::{allocate, PlanarWrench, ThrusterLayout};
use crate::dynamics::{propagate_chaser, InertialParams, PlanarMask, RigidState, Wrench};
use crate::nmpc::{build_problem, FormationOffset, HorizonInput, HorizonProblem, NmpcConfig};
use crate::solver::dense_qp::DenseQp;
use crate::solver::{self, DecisionVector, Objective, SolverConfig, SolverError};
use crate::spatial::{quat_error, quat_to_angle, rotate_vector, PoseSE3, Quat, Vec3};
use crate::vision::{camera_pose, observe, solve_pnp, CameraIntrinsics, MarkerLayout};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub cases: usize,
    /// Worst observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} cases={:<4} worst={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

fn report(name: &'static str, cases: usize, worst: f64, tolerance: f64) -> OracleReport {
    OracleReport { name, cases, worst, tolerance, passed: worst <= tolerance }
}

fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.scale(1.0 / n);
        }
    }
}

/// Random multi-chaser horizon problem and a random point in its domain.
pub fn random_horizon_problem(seed: u64) -> (HorizonProblem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chasers = 1 + (seed as usize % 3);
    let target = RigidState {
        p: random_vec(&mut rng, 0.5),
        q: random_quat(&mut rng),
        v: random_vec(&mut rng, 0.05),
        w: random_vec(&mut rng, 0.1),
    };
    let states: Vec<RigidState> = (0..chasers)
        .map(|_| RigidState {
            p: target.p + random_vec(&mut rng, 0.6),
            q: random_quat(&mut rng),
            v: random_vec(&mut rng, 0.2),
            w: random_vec(&mut rng, 0.3),
        })
        .collect();
    let offsets: Vec<FormationOffset> =
        (0..chasers).map(|_| FormationOffset::new(random_vec(&mut rng, 3.0), random_quat(&mut rng))).collect();
    // Tight distance limits so the penalties are active.
    let cfg = NmpcConfig { horizon: 0.8, dt: 0.1, alpha: 0.3, d_min: 0.5, d_max: 1.0, ..NmpcConfig::default() };
    let input = HorizonInput { target, chasers: &states, offsets: &offsets, model: InertialParams::default(), planar: false };
    let (problem, _) = build_problem(&input, &cfg).expect("valid random problem");
    let z = (0..problem.dim())
        .map(|k| if k % 6 < 3 { rng.random_range(-1.0..1.0) } else { rng.random_range(-0.5..0.5) })
        .collect();
    (problem, z)
}

/// Worst relative deviation of the analytic gradient from central finite
/// differences. Components are compared against `max(|fd_k|, 1e-2‖fd‖∞)`
/// so that near-zero entries do not dominate.
pub fn gradient_relative_error(problem: &dyn Objective, z: &[f64], penalty: f64) -> Result<f64, SolverError> {
    let mut g = vec![0.0; z.len()];
    problem.value_and_gradient(z, penalty, &mut g)?;
    let h = 1e-6;
    let mut zz = z.to_vec();
    let mut fd = vec![0.0; z.len()];
    for k in 0..z.len() {
        zz[k] = z[k] + h;
        let fp = problem.value(&zz, penalty)?;
        zz[k] = z[k] - h;
        let fm = problem.value(&zz, penalty)?;
        zz[k] = z[k];
        fd[k] = (fp - fm) / (2.0 * h);
    }
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    Ok(g.iter().zip(&fd).map(|(a, b)| (a - b).abs() / b.abs().max(1e-2 * scale)).fold(0.0, f64::max))
}

pub fn gradient_oracle(instances: usize) -> OracleReport {
    let worst = (0..instances as u64)
        .map(|seed| {
            let (p, z) = random_horizon_problem(seed);
            let penalty = if seed % 2 == 0 { 0.0 } else { 100.0 };
            gradient_relative_error(&p, &z, penalty).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max);
    report("adjoint gradient vs finite diff", instances, worst, 1e-5)
}

/// Noise-free observations of a random target pose recovered by PnP;
/// the error is the larger of translation (m) and rotation (rad).
pub fn pnp_oracle(instances: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let intr = CameraIntrinsics::default();
    let layout = MarkerLayout::cube(0.3, 0.24);
    let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < instances {
        let target = RigidState::at_rest(
            Vec3::new(rng.random_range(1.0..3.0), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)),
            random_quat(&mut rng),
        );
        let obs = observe(&intr, &cam, &target, &layout, 0.0, 0, 0.0);
        if obs.len() < 4 {
            continue;
        }
        cases += 1;
        let truth = cam.inverse().compose(&PoseSE3::new(target.q, target.p));
        let err = match solve_pnp(&intr, &layout, &obs) {
            Ok(est) => (est.pose.translation - truth.translation)
                .norm()
                .max(quat_to_angle(quat_error(est.pose.rotation, truth.rotation))),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    report("PnP round trip (noise-free)", instances, worst, 1e-6)
}

/// Exhaustive active-set solution of `min ½tᵀGt + aᵀt` subject to
/// `Bt = w` (omitted when `b` is `None`) and `0 ≤ t ≤ tmax`: every
/// lower/upper/free pattern is solved on its face and the best feasible
/// candidate kept. Exact for strictly convex objectives.
pub fn enumerate_box_qp(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
    tmax: &[f64],
) -> Option<DVector<f64>> {
    let n = a.len();
    let m = eq.map_or(0, |(b, _)| b.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut t = DVector::from_iterator(n, (0..n).map(|i| if state[i] == 1 { tmax[i] } else { 0.0 }));
        let k = free.len();
        // KKT system on the face: [G_FF  B_Fᵀ; B_F  0] [t_F; λ] = [−a_F − G_FX t_X; w − B_X t_X].
        let mut kkt = DMatrix::zeros(k + m, k + m);
        let mut rhs = DVector::zeros(k + m);
        let fixed_grad = g * &t;
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                kkt[(r, s)] = g[(i, j)];
            }
            rhs[r] = -a[i] - fixed_grad[i];
        }
        if let Some((b, w)) = eq {
            let bt = b * &t;
            for row in 0..m {
                for (s, &j) in free.iter().enumerate() {
                    kkt[(k + row, s)] = b[(row, j)];
                    kkt[(s, k + row)] = b[(row, j)];
                }
                rhs[k + row] = w[row] - bt[row];
            }
        }
        let sol = if k + m == 0 {
            Some(DVector::zeros(0))
        } else {
            // Singular faces (dependent equality rows) have no unique point;
            // a least-squares solve still yields the face minimizer when one
            // exists and the feasibility check below screens the rest.
            kkt.clone().svd(true, true).solve(&rhs, 1e-12).ok()
        };
        let Some(sol) = sol else { continue };
        for (r, &i) in free.iter().enumerate() {
            t[i] = sol[r];
        }
        let inside = (0..n).all(|i| t[i] >= -1e-10 && t[i] <= tmax[i] + 1e-10);
        let consistent = eq.is_none_or(|(b, w)| (b * &t - w).amax() <= 1e-9);
        if !(inside && consistent) {
            continue;
        }
        let f = 0.5 * t.dot(&(g * &t)) + a.dot(&t);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb - 1e-15) {
            best = Some((f, t));
        }
    }
    best.map(|(_, t)| t)
}

/// Minimum-effort thrusts for an attainable wrench, or the closest
/// attainable wrench followed by minimum effort, by exhaustive enumeration.
pub fn allocation_by_enumeration(wrench: &PlanarWrench, layout: &ThrusterLayout) -> DVector<f64> {
    let n = layout.len();
    let b = DMatrix::from_iterator(3, n, layout.effectiveness().iter().copied());
    let tmax = layout.max_thrusts();
    let w = DVector::from_column_slice(wrench.as_slice());
    let eye = DMatrix::identity(n, n);
    if let Some(t) = enumerate_box_qp(&eye, &DVector::zeros(n), Some((&b, &w)), &tmax) {
        return t;
    }
    // ‖Bt − w‖² + ε‖t‖², then minimum effort on the achieved wrench.
    let g = (b.tr_mul(&b) + &eye * 1e-9) * 2.0;
    let a = -(b.tr_mul(&w)) * 2.0;
    let t_a = enumerate_box_qp(&g, &a, None, &tmax).expect("box is non-empty");
    let w_star = &b * &t_a;
    enumerate_box_qp(&eye, &DVector::zeros(n), Some((&b, &w_star)), &tmax).unwrap_or(t_a)
}

pub fn allocation_oracle(instances: usize) -> OracleReport {
    let layout = ThrusterLayout::slider();
    let b = layout.effectiveness();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for k in 0..instances {
        // Two thirds attainable by construction, the rest arbitrary.
        let w = if k % 3 < 2 {
            let t: Vec<f64> = layout.max_thrusts().iter().map(|m| rng.random_range(0.0..*m)).collect();
            &b * DVector::from_vec(t)
        } else {
            PlanarWrench::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.6..0.6))
        };
        let oracle = allocation_by_enumeration(&w, &layout);
        let err = match allocate(&w, &layout) {
            Ok(a) => a.thrusts.iter().zip(oracle.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    report("allocation vs exhaustive active set", instances, worst, 1e-6)
}

/// Strictly convex quadratic `½zᵀGz + aᵀz` as a solver objective.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, z: &[f64], _penalty: f64) -> Result<f64, SolverError> {
        let z = DVector::from_column_slice(z);
        Ok(0.5 * z.dot(&(&self.g * &z)) + self.a.dot(&z))
    }

    fn value_and_gradient(&self, z: &[f64], penalty: f64, grad: &mut [f64]) -> Result<f64, SolverError> {
        let zv = DVector::from_column_slice(z);
        grad.copy_from_slice((&self.g * &zv + &self.a).as_slice());
        self.value(z, penalty)
    }
}

/// Random box-constrained strictly convex QP, returned with its bounds.
pub fn random_box_qp(seed: u64) -> (Quadratic, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let g = m.tr_mul(&m) + DMatrix::identity(n, n) * 0.5;
    let a = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.2..1.5)).collect();
    (Quadratic { g, a }, lower, upper)
}

/// The box QP as a dense inequality-constrained QP.
pub fn box_qp_as_dense(q: &Quadratic, lower: &[f64], upper: &[f64]) -> DenseQp {
    let n = q.a.len();
    let mut c = DMatrix::zeros(n, 2 * n);
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        d[i] = lower[i];
        c[(i, n + i)] = -1.0;
        d[n + i] = -upper[i];
    }
    DenseQp { g: q.g.clone(), a: q.a.clone(), c, d }
}

pub fn solver_oracle(instances: usize) -> OracleReport {
    let cfg = SolverConfig { tolerance: 1e-10, max_inner_iterations: 5000, ..SolverConfig::default() };
    let worst = (0..instances as u64)
        .map(|seed| {
            let (q, lower, upper) = random_box_qp(seed);
            let Ok(reference) = box_qp_as_dense(&q, &lower, &upper).solve() else {
                return f64::INFINITY;
            };
            let z0 = DecisionVector::new(vec![0.0; lower.len()], lower, upper);
            match solver::solve(&q, &z0, &cfg) {
                Ok((z, _)) => z.values.iter().zip(reference.x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                Err(_) => f64::INFINITY,
            }
        })
        .fold(0.0, f64::max);
    report("solver vs dense QP", instances, worst, 1e-6)
}

/// Torque-free tumbling of an asymmetric body for 10 s at a 0.1 ms step;
/// world-frame angular momentum should be conserved.
pub fn momentum_oracle() -> OracleReport {
    let params = InertialParams { mass: 1.0, inertia: Matrix3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)) };
    let mut s = RigidState { w: Vec3::new(0.3, -0.2, 0.4), ..RigidState::default() };
    let h = |s: &RigidState| rotate_vector(s.q, params.inertia * s.w);
    let h0 = h(&s);
    for _ in 0..10 {
        s = propagate_chaser(&s, &Wrench::zero(), &params, &PlanarMask::full(), Vec3::zeros(), 1.0, 1e-4)
            .expect("finite state");
    }
    report("angular momentum conservation", 1, (h(&s) - h0).norm() / h0.norm(), 1e-3)
}

/// The full oracle suite.
pub fn run_all() -> Vec<OracleReport> {
    vec![gradient_oracle(20), pnp_oracle(20), allocation_oracle(100), solver_oracle(20), momentum_oracle()]
}
