//! Rolled-out horizon objective with its discrete adjoint.

use super::NmpcConfig;
use crate::dynamics::{InertialParams, RigidState};
use crate::solver::{Objective, SolverError};
use crate::spatial::{quat_multiply, rotate_vector, Quat, Vec3};
use nalgebra::{Matrix3, Matrix4, Matrix6, Vector4, Vector6};

/// Which distance constraints enter the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintSet {
    pub target: bool,
    pub pairs: bool,
    pub leash: bool,
}

impl ConstraintSet {
    pub fn all() -> Self {
        Self { target: true, pairs: true, leash: true }
    }

    pub fn none() -> Self {
        Self { target: false, pairs: false, leash: false }
    }

    pub fn any(&self) -> bool {
        self.target || self.pairs || self.leash
    }
}

/// Per-chaser predicted states and pre-normalization attitude norms.
pub type Rollout = (Vec<Vec<RigidState>>, Vec<Vec<f64>>);

/// Everything fixed during one solve.
#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub steps: usize,
    pub dt: f64,
    pub alpha: f64,
    q_p: Matrix3<f64>,
    q_q: Matrix4<f64>,
    q_u: Matrix6<f64>,
    q_f_p: Matrix3<f64>,
    q_f_q: Matrix4<f64>,
    u_ref: Vector6<f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub constraints: ConstraintSet,
    pub model: InertialParams,
    inv_inertia: Matrix3<f64>,
    pub initial: Vec<RigidState>,
    /// Per chaser, per step `0..=D`: reference position and attitude.
    pub references: Vec<Vec<(Vec3, Quat)>>,
    /// Predicted target positions, `0..=D`.
    pub target_positions: Vec<Vec3>,
    /// First step whose positions depend on the inputs.
    first_free: usize,
}

/// Symmetrized weight, so the gradient is `W (e)` with `W = Q + Qᵀ`.
fn sym<const N: usize>(q: &nalgebra::SMatrix<f64, N, N>) -> nalgebra::SMatrix<f64, N, N> {
    q + q.transpose()
}

impl HorizonProblem {
    pub fn new(
        cfg: &NmpcConfig,
        model: InertialParams,
        initial: Vec<RigidState>,
        references: Vec<Vec<(Vec3, Quat)>>,
        target_positions: Vec<Vec3>,
        constraints: ConstraintSet,
    ) -> Self {
        let steps = cfg.steps();
        assert_eq!(initial.len(), references.len());
        assert!(references.iter().all(|r| r.len() == steps + 1));
        assert_eq!(target_positions.len(), steps + 1);
        Self {
            steps,
            dt: cfg.dt,
            alpha: cfg.alpha,
            q_p: cfg.q_p,
            q_q: cfg.q_q,
            q_u: cfg.q_u,
            q_f_p: cfg.q_f_p,
            q_f_q: cfg.q_f_q,
            u_ref: Vector6::from_column_slice(&cfg.u_ref),
            d_min: cfg.d_min,
            d_max: cfg.d_max,
            constraints,
            inv_inertia: model.inverse_inertia(),
            model,
            initial,
            references,
            target_positions,
            first_free: 2,
        }
    }

    pub fn chasers(&self) -> usize {
        self.initial.len()
    }

    fn input(&self, z: &[f64], i: usize, j: usize) -> (Vec3, Vec3) {
        let o = (i * self.steps + j) * 6;
        (Vec3::new(z[o], z[o + 1], z[o + 2]), Vec3::new(z[o + 3], z[o + 4], z[o + 5]))
    }

    /// Predicted states `0..=D` for every chaser, plus the pre-normalization
    /// attitude norms of each step.
    pub fn rollout(&self, z: &[f64]) -> Result<Rollout, SolverError> {
        let d = self.steps;
        let mut states = Vec::with_capacity(self.chasers());
        let mut norms = Vec::with_capacity(self.chasers());
        for (i, x0) in self.initial.iter().enumerate() {
            let mut xs = Vec::with_capacity(d + 1);
            let mut ns = Vec::with_capacity(d);
            xs.push(*x0);
            for j in 0..d {
                let (f, tau) = self.input(z, i, j);
                let (next, n) = self.step(&xs[j], f, tau);
                if !next.is_finite() || !(n > 0.0) {
                    return Err(SolverError::NonFinite { step: j + 1 });
                }
                xs.push(next);
                ns.push(n);
            }
            states.push(xs);
            norms.push(ns);
        }
        Ok((states, norms))
    }

    fn step(&self, x: &RigidState, f: Vec3, tau: Vec3) -> (RigidState, f64) {
        let dt = self.dt;
        let i = &self.model.inertia;
        let dq = quat_multiply(x.q, Quat::from_scalar_vector(0.0, x.w)).scale(0.5);
        let qt = x.q.add(&dq.scale(dt));
        let n = qt.norm();
        let next = RigidState {
            p: x.p + x.v * dt,
            q: qt.scale(1.0 / n),
            v: x.v + rotate_vector(x.q, f) * (dt / self.model.mass),
            w: x.w + self.inv_inertia * (tau - x.w.cross(&(i * x.w))) * dt,
        };
        (next, n)
    }

    fn falloff(&self, j: usize) -> f64 {
        1.0 - self.alpha * j as f64 / self.steps as f64
    }

    /// Tracking cost of one state (stage weight `w` on the running terms,
    /// plus the terminal terms when `terminal`). Adds `∂/∂p`, `∂/∂q` into
    /// the provided accumulators when given.
    fn state_cost(
        &self,
        x: &RigidState,
        reference: &(Vec3, Quat),
        j: usize,
        grads: Option<(&mut Vec3, &mut Quat)>,
    ) -> f64 {
        let w = self.falloff(j);
        let terminal = j == self.steps;
        let ep = x.p - reference.0;
        let c = reference.1.conjugate();
        let m = quat_multiply(x.q, c);
        let s = if m.w >= 0.0 { 1.0 } else { -1.0 };
        let e = Vector4::new(s * m.w - 1.0, s * m.x, s * m.y, s * m.z);
        let mut cost = w * (ep.dot(&(self.q_p * ep)) + e.dot(&(self.q_q * e)));
        if terminal {
            cost += ep.dot(&(self.q_f_p * ep)) + e.dot(&(self.q_f_q * e));
        }
        if let Some((gp, gq)) = grads {
            let mut wp = sym(&self.q_p) * w;
            let mut wq = sym(&self.q_q) * w;
            if terminal {
                wp += sym(&self.q_f_p);
                wq += sym(&self.q_f_q);
            }
            *gp += wp * ep;
            let ge = wq * e * s;
            let (a, b) = (ge[0], Vec3::new(ge[1], ge[2], ge[3]));
            let cv = c.vector();
            let lw = a * c.w + b.dot(&cv);
            let lr = -cv * a + b * c.w + cv.cross(&b);
            *gq = gq.add(&Quat::from_scalar_vector(lw, lr));
        }
        cost
    }

    fn input_cost(&self, f: Vec3, tau: Vec3, grad: Option<&mut [f64]>) -> f64 {
        let u = Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z) - self.u_ref;
        if let Some(g) = grad {
            let gu = sym(&self.q_u) * u;
            g.copy_from_slice(gu.as_slice());
        }
        u.dot(&(self.q_u * u))
    }

    /// Squared-hinge penalty of the input-dependent steps and its position
    /// gradient (per chaser, per step).
    fn penalty(&self, states: &[Vec<RigidState>], mut grad: Option<&mut [Vec<Vec3>]>) -> f64 {
        let mut total = 0.0;
        let n = states.len();
        let mut add = |g: f64, terms: &[(usize, Vec3)], j: usize, grad: &mut Option<&mut [Vec<Vec3>]>| {
            if g > 0.0 {
                total += g * g;
                if let Some(gr) = grad.as_deref_mut() {
                    for (i, dir) in terms {
                        gr[*i][j] += dir * (2.0 * g);
                    }
                }
            }
        };
        let unit = |v: Vec3| {
            let l = v.norm();
            if l > 0.0 {
                (l, v / l)
            } else {
                (0.0, Vec3::zeros())
            }
        };
        for j in self.first_free..=self.steps {
            if self.constraints.target {
                for (i, s) in states.iter().enumerate() {
                    let (l, u) = unit(s[j].p - self.target_positions[j]);
                    add(self.d_min - l, &[(i, -u)], j, &mut grad);
                }
            }
            if self.constraints.pairs {
                for m in 0..n {
                    for k in (m + 1)..n {
                        let (l, u) = unit(states[m][j].p - states[k][j].p);
                        add(self.d_min - l, &[(m, -u), (k, u)], j, &mut grad);
                    }
                }
            }
            if self.constraints.leash {
                for (i, s) in states.iter().enumerate() {
                    let (l, u) = unit(s[j].p - self.references[i][j].0);
                    add(l - self.d_max, &[(i, u)], j, &mut grad);
                }
            }
        }
        total
    }

    /// Cost (without penalty) of a rolled-out plan.
    pub fn tracking_cost(&self, z: &[f64], states: &[Vec<RigidState>]) -> f64 {
        let mut cost = 0.0;
        for (i, xs) in states.iter().enumerate() {
            for (j, x) in xs.iter().enumerate() {
                cost += self.state_cost(x, &self.references[i][j], j, None);
            }
            for j in 0..self.steps {
                let (f, tau) = self.input(z, i, j);
                cost += self.input_cost(f, tau, None);
            }
        }
        cost
    }

    fn evaluate(&self, z: &[f64], penalty: f64, grad: Option<&mut [f64]>) -> Result<f64, SolverError> {
        if z.len() != self.dim() {
            return Err(SolverError::Dimension { expected: self.dim(), got: z.len() });
        }
        let (states, norms) = self.rollout(z)?;
        let Some(grad) = grad else {
            let mut v = self.tracking_cost(z, &states);
            if penalty > 0.0 && self.constraints.any() {
                v += penalty * self.penalty(&states, None);
            }
            return finite(v, 0);
        };

        let d = self.steps;
        let mut pen_grad: Vec<Vec<Vec3>> = vec![vec![Vec3::zeros(); d + 1]; states.len()];
        let mut total = 0.0;
        if penalty > 0.0 && self.constraints.any() {
            total += penalty * self.penalty(&states, Some(&mut pen_grad));
        }
        let inertia = self.model.inertia;
        let dt = self.dt;
        let mass = self.model.mass;
        for (i, xs) in states.iter().enumerate() {
            // Adjoint of the state at step D.
            let mut lp = Vec3::zeros();
            let mut lq = Quat::new(0.0, 0.0, 0.0, 0.0);
            total += self.state_cost(&xs[d], &self.references[i][d], d, Some((&mut lp, &mut lq)));
            lp += pen_grad[i][d] * penalty;
            let mut lv = Vec3::zeros();
            let mut lw = Vec3::zeros();
            for j in (0..d).rev() {
                let x = &xs[j];
                let (f, tau) = self.input(z, i, j);
                let o = (i * d + j) * 6;
                total += self.input_cost(f, tau, Some(&mut grad[o..o + 6]));

                // Renormalization.
                let qn = xs[j + 1].q;
                let lqt = lq.add(&qn.scale(-qn.dot(&lq))).scale(1.0 / norms[i][j]);

                // Translation.
                let lp_prev = lp;
                let lv_prev = lv + lp * dt;

                // Force rotation.
                let lam = lv;
                let lf = rotate_vector(x.q.conjugate(), lam) * (dt / mass);
                let r = x.q.vector();
                let w = x.q.w;
                let k = dt / mass;
                let lf_dot = lam.dot(&f);
                let mut lq_prev_w = k * (2.0 * w * lf_dot + 2.0 * lam.dot(&r.cross(&f)));
                let mut lq_prev_r =
                    (r * (-2.0 * lf_dot) + lam * (2.0 * r.dot(&f)) + f * (2.0 * r.dot(&lam)) + f.cross(&lam) * (2.0 * w)) * k;

                // Attitude kinematics.
                let (a, b) = (lqt.w, lqt.vector());
                let h = 0.5 * dt;
                lq_prev_w += a + h * b.dot(&x.w);
                lq_prev_r += b + (x.w * -a + x.w.cross(&b)) * h;
                let mut lw_prev = (r * -a + b * w + b.cross(&r)) * h;

                // Euler's equation.
                let mu = self.inv_inertia.transpose() * lw;
                let ltau = mu * dt;
                let iw = inertia * x.w;
                lw_prev += lw - (iw.cross(&mu) + inertia.transpose() * mu.cross(&x.w)) * dt;

                grad[o] += lf.x;
                grad[o + 1] += lf.y;
                grad[o + 2] += lf.z;
                grad[o + 3] += ltau.x;
                grad[o + 4] += ltau.y;
                grad[o + 5] += ltau.z;

                // Stage cost and penalty at step j.
                lp = lp_prev;
                lq = Quat::from_scalar_vector(lq_prev_w, lq_prev_r);
                total += self.state_cost(x, &self.references[i][j], j, Some((&mut lp, &mut lq)));
                lp += pen_grad[i][j] * penalty;
                lv = lv_prev;
                lw = lw_prev;
            }
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(SolverError::NonFinite { step: (bad / 6) % d.max(1) });
        }
        finite(total, 0)
    }

    pub(crate) fn geometry(&self) -> Geometry<'_> {
        Geometry {
            d_min: self.d_min,
            d_max: self.d_max,
            constraints: self.constraints,
            target_positions: &self.target_positions,
            references: &self.references,
        }
    }

    /// Largest violation over the input-dependent steps.
    pub fn violation(&self, states: &[Vec<RigidState>]) -> f64 {
        let mut r = Vec::new();
        let geom = self.geometry();
        for j in self.first_free..=self.steps {
            step_residuals(&geom, states, j, &mut r);
        }
        r.into_iter().fold(0.0, f64::max)
    }
}

pub(crate) struct Geometry<'a> {
    pub d_min: f64,
    pub d_max: f64,
    pub constraints: ConstraintSet,
    pub target_positions: &'a [Vec3],
    pub references: &'a [Vec<(Vec3, Quat)>],
}

/// Residuals `g ≤ 0` of the enabled distance constraints at step `j`, in a
/// fixed order: target per chaser, pairs `(m < n)`, leash per chaser.
pub(crate) fn step_residuals(g: &Geometry, states: &[Vec<RigidState>], j: usize, out: &mut Vec<f64>) {
    let n = states.len();
    if g.constraints.target {
        for s in states {
            out.push(g.d_min - (s[j].p - g.target_positions[j]).norm());
        }
    }
    if g.constraints.pairs {
        for m in 0..n {
            for k in (m + 1)..n {
                out.push(g.d_min - (states[m][j].p - states[k][j].p).norm());
            }
        }
    }
    if g.constraints.leash {
        for (i, s) in states.iter().enumerate() {
            out.push((s[j].p - g.references[i][j].0).norm() - g.d_max);
        }
    }
}

fn finite(v: f64, step: usize) -> Result<f64, SolverError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SolverError::NonFinite { step })
    }
}

impl Objective for HorizonProblem {
    fn dim(&self) -> usize {
        6 * self.steps * self.chasers()
    }

    fn value(&self, z: &[f64], penalty: f64) -> Result<f64, SolverError> {
        self.evaluate(z, penalty, None)
    }

    fn value_and_gradient(&self, z: &[f64], penalty: f64, grad: &mut [f64]) -> Result<f64, SolverError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.evaluate(z, penalty, Some(grad))
    }

    fn max_violation(&self, z: &[f64]) -> f64 {
        match self.rollout(z) {
            Ok((states, _)) => self.violation(&states),
            Err(_) => f64::INFINITY,
        }
    }

    fn has_constraints(&self) -> bool {
        self.constraints.any()
    }
}
