//! Box-constrained nonconvex optimizer.
//!
//! The inner loop is a forward-backward (projected gradient) method
//! accelerated with L-BFGS directions, globalized by a line search on the
//! forward-backward envelope. General inequality constraints enter as a
//! quadratic penalty whose weight grows in an outer loop until the
//! violation is below tolerance.

pub mod dense_qp;
mod lbfgs;

use lbfgs::{dot, Lbfgs};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite value at prediction step {step}")]
    NonFinite { step: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Smooth objective `f(z) + ρ·P(z)` where `P` is the squared constraint
/// violation.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64], penalty: f64) -> Result<f64, SolverError>;

    /// Value, with the gradient written into `grad`.
    fn value_and_gradient(&self, z: &[f64], penalty: f64, grad: &mut [f64]) -> Result<f64, SolverError>;

    /// Largest constraint violation (0 when all constraints hold).
    fn max_violation(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn has_constraints(&self) -> bool {
        false
    }
}

/// Flat decision vector with per-component box bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DecisionVector {
    pub fn new(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(values.len(), lower.len());
        assert_eq!(values.len(), upper.len());
        Self { values, lower, upper }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        self.values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Componentwise clamp to the bounds.
pub fn project_box(z: &DecisionVector) -> DecisionVector {
    let mut out = z.clone();
    clamp_into(&mut out.values, &z.lower, &z.upper);
    out
}

fn clamp_into(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((x, l), h) in v.iter_mut().zip(lo).zip(hi) {
        *x = x.clamp(*l, *h);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_inner_iterations: usize,
    /// Fixed-point residual tolerance, `‖z − Π(z − γ∇f)‖∞ / γ`.
    pub tolerance: f64,
    pub lbfgs_memory: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    pub penalty_growth: f64,
    pub constraint_tolerance: f64,
    #[serde(default)]
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_inner_iterations: 500,
            tolerance: 1e-6,
            lbfgs_memory: 10,
            initial_penalty: 10.0,
            max_penalty: 1e6,
            penalty_growth: 10.0,
            constraint_tolerance: 1e-3,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_inner_iterations == 0 || !(self.tolerance > 0.0) || self.lbfgs_memory == 0 {
            return Err("solver iteration cap, tolerance and memory must be positive".into());
        }
        if !(self.initial_penalty > 0.0 && self.max_penalty >= self.initial_penalty) {
            return Err("penalty weights must be positive and ordered".into());
        }
        if !(self.penalty_growth > 1.0) {
            return Err("penalty growth factor must exceed 1".into());
        }
        if !(self.constraint_tolerance > 0.0) {
            return Err("constraint tolerance must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer: usize,
    pub iteration: usize,
    pub penalty: f64,
    pub cost: f64,
    pub envelope: f64,
    pub residual: f64,
    pub gamma: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub cost: f64,
    /// Final fixed-point residual (projected-gradient norm).
    pub gradient_norm: f64,
    pub max_violation: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub penalty: f64,
    pub converged: bool,
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    /// Write the iteration trace as CSV.
    pub fn write_trace<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.trace {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gradient of `objective + penalty` at `z`; a thin wrapper kept for callers
/// that only need the derivative.
pub fn gradient(problem: &dyn Objective, z: &[f64], penalty: f64) -> Result<Vec<f64>, SolverError> {
    if z.len() != problem.dim() {
        return Err(SolverError::Dimension { expected: problem.dim(), got: z.len() });
    }
    let mut g = vec![0.0; z.len()];
    problem.value_and_gradient(z, penalty, &mut g)?;
    Ok(g)
}

struct InnerResult {
    z: Vec<f64>,
    cost: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
}

struct Panoc<'a> {
    problem: &'a dyn Objective,
    lower: &'a [f64],
    upper: &'a [f64],
    cfg: &'a SolverConfig,
    penalty: f64,
    outer: usize,
}

impl Panoc<'_> {
    fn forward_backward(&self, u: &[f64], g: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
        let mut ub: Vec<f64> = u.iter().zip(g).map(|(a, b)| a - gamma * b).collect();
        clamp_into(&mut ub, self.lower, self.upper);
        let r: Vec<f64> = u.iter().zip(&ub).map(|(a, b)| a - b).collect();
        (ub, r)
    }

    fn lipschitz_estimate(&self, u: &[f64], g: &[f64]) -> Result<f64, SolverError> {
        let delta: Vec<f64> = u.iter().map(|x| (1e-6 * x.abs()).max(1e-6)).collect();
        let up: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let mut gp = vec![0.0; u.len()];
        self.problem.value_and_gradient(&up, self.penalty, &mut gp)?;
        let num: f64 = gp.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        Ok((num / den).max(1e-8))
    }

    fn run(&self, u0: Vec<f64>, trace: &mut Vec<TraceRow>) -> Result<InnerResult, SolverError> {
        let n = u0.len();
        let mut u = u0;
        let mut g = vec![0.0; n];
        let mut f = self.problem.value_and_gradient(&u, self.penalty, &mut g)?;
        let mut lip = self.lipschitz_estimate(&u, &g)?;
        let mut gamma = 0.95 / lip;
        let mut memory = Lbfgs::new(self.cfg.lbfgs_memory);
        let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut best: Option<(f64, Vec<f64>, f64)> = None;

        for iter in 0..self.cfg.max_inner_iterations {
            let (mut ub, mut r) = self.forward_backward(&u, &g, gamma);
            let mut fb = self.problem.value(&ub, self.penalty)?;
            loop {
                let rr = dot(&r, &r);
                let bound = f - dot(&g, &r) + 0.5 * lip * rr + 1e-12 * f.abs();
                if rr == 0.0 || fb <= bound {
                    break;
                }
                lip *= 2.0;
                gamma *= 0.5;
                memory.reset();
                previous = None;
                (ub, r) = self.forward_backward(&u, &g, gamma);
                fb = self.problem.value(&ub, self.penalty)?;
            }
            let residual = r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / gamma;
            if best.as_ref().is_none_or(|b| fb <= b.0) {
                best = Some((fb, ub.clone(), residual));
            }
            let rr = dot(&r, &r);
            let envelope = f - dot(&g, &r) + rr / (2.0 * gamma);
            if residual < self.cfg.tolerance {
                if self.cfg.trace {
                    trace.push(self.row(iter, fb, envelope, residual, gamma, 0.0));
                }
                return Ok(InnerResult { z: ub, cost: fb, residual, iterations: iter + 1, converged: true });
            }

            if let Some((u_prev, r_prev)) = previous.take() {
                let s: Vec<f64> = u.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = r.iter().zip(&r_prev).map(|(a, b)| a - b).collect();
                memory.update(s, y);
            }
            let mut d = r.clone();
            memory.apply(&mut d);
            d.iter_mut().for_each(|x| *x = -*x);

            let sigma = 0.5 * (1.0 - gamma * lip) / (2.0 * gamma);
            let mut tau = 1.0;
            let mut g_new = vec![0.0; n];
            let (u_new, f_new) = loop {
                let cand: Vec<f64> = if tau == 0.0 {
                    ub.clone()
                } else {
                    u.iter().zip(&r).zip(&d).map(|((ui, ri), di)| ui - (1.0 - tau) * ri + tau * di).collect()
                };
                let fc = match self.problem.value_and_gradient(&cand, self.penalty, &mut g_new) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(_) if tau > 0.0 => f64::INFINITY,
                    Ok(_) => return Err(SolverError::NonFinite { step: 0 }),
                    Err(e) => return Err(e),
                };
                if tau == 0.0 {
                    break (cand, fc);
                }
                if fc.is_finite() {
                    let (_, rc) = self.forward_backward(&cand, &g_new, gamma);
                    let env = fc - dot(&g_new, &rc) + dot(&rc, &rc) / (2.0 * gamma);
                    if env <= envelope - sigma * rr {
                        break (cand, fc);
                    }
                }
                tau *= 0.5;
                if tau < 1.0 / 1024.0 {
                    tau = 0.0;
                }
            };
            if self.cfg.trace {
                trace.push(self.row(iter, fb, envelope, residual, gamma, tau));
            }
            previous = Some((u, r));
            u = u_new;
            f = f_new;
            g = g_new;
        }
        let (cost, z, residual) = best.expect("at least one iteration");
        Ok(InnerResult { z, cost, residual, iterations: self.cfg.max_inner_iterations, converged: false })
    }

    fn row(&self, iteration: usize, cost: f64, envelope: f64, residual: f64, gamma: f64, tau: f64) -> TraceRow {
        TraceRow { outer: self.outer, iteration, penalty: self.penalty, cost, envelope, residual, gamma, tau }
    }
}

/// Minimize `problem` over the box of `z0`, starting from `z0` projected.
/// The returned vector is always box-feasible.
pub fn solve(
    problem: &dyn Objective,
    z0: &DecisionVector,
    cfg: &SolverConfig,
) -> Result<(DecisionVector, SolveReport), SolverError> {
    if z0.len() != problem.dim() {
        return Err(SolverError::Dimension { expected: problem.dim(), got: z0.len() });
    }
    let start = Instant::now();
    let mut z = project_box(z0);
    let mut penalty = cfg.initial_penalty;
    let mut trace = Vec::new();
    let mut inner_total = 0;
    let mut outer = 0;
    let (cost, residual, inner_converged, violation) = loop {
        outer += 1;
        let panoc = Panoc { problem, lower: &z.lower, upper: &z.upper, cfg, penalty, outer };
        let res = panoc.run(z.values.clone(), &mut trace)?;
        inner_total += res.iterations;
        z.values = res.z;
        let violation = problem.max_violation(&z.values);
        if !problem.has_constraints() || violation < cfg.constraint_tolerance || penalty >= cfg.max_penalty {
            break (res.cost, res.residual, res.converged, violation);
        }
        penalty = (penalty * cfg.penalty_growth).min(cfg.max_penalty);
    };
    debug_assert!(z.is_feasible());
    let report = SolveReport {
        cost,
        gradient_norm: residual,
        max_violation: violation,
        inner_iterations: inner_total,
        outer_iterations: outer,
        penalty,
        converged: inner_converged && violation < cfg.constraint_tolerance,
        wall_time: start.elapsed(),
        trace,
    };
    Ok((z, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Separable nonconvex test function with a box.
    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, z: &[f64], _: f64) -> Result<f64, SolverError> {
            Ok((1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2))
        }
        fn value_and_gradient(&self, z: &[f64], p: f64, g: &mut [f64]) -> Result<f64, SolverError> {
            g[0] = -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]);
            g[1] = 200.0 * (z[1] - z[0] * z[0]);
            self.value(z, p)
        }
    }

    /// ‖z − c‖² subject to ‖z‖ ≥ 1 via penalty.
    struct OutsideDisk {
        c: [f64; 2],
    }

    impl Objective for OutsideDisk {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, z: &[f64], p: f64) -> Result<f64, SolverError> {
            let mut g = [0.0; 2];
            self.value_and_gradient(z, p, &mut g)
        }
        fn value_and_gradient(&self, z: &[f64], p: f64, g: &mut [f64]) -> Result<f64, SolverError> {
            let n = (z[0] * z[0] + z[1] * z[1]).sqrt();
            let v = (1.0 - n).max(0.0);
            let mut f = 0.0;
            for k in 0..2 {
                f += (z[k] - self.c[k]).powi(2);
                g[k] = 2.0 * (z[k] - self.c[k]) - 2.0 * p * v * z[k] / n;
            }
            Ok(f + p * v * v)
        }
        fn max_violation(&self, z: &[f64]) -> f64 {
            (1.0 - (z[0] * z[0] + z[1] * z[1]).sqrt()).max(0.0)
        }
        fn has_constraints(&self) -> bool {
            true
        }
    }

    fn boxed(values: Vec<f64>, lo: f64, hi: f64) -> DecisionVector {
        let n = values.len();
        DecisionVector::new(values, vec![lo; n], vec![hi; n])
    }

    #[test]
    fn projection_examples() {
        let z = boxed(vec![0.5, -0.2], -1.0, 1.0);
        assert_eq!(project_box(&z), z);
        let z = boxed(vec![2.0, -3.0], -1.0, 1.0);
        assert_eq!(project_box(&z).values, vec![1.0, -1.0]);
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let cfg = SolverConfig { tolerance: 1e-8, ..Default::default() };
        let (z, rep) = solve(&Rosenbrock, &boxed(vec![-1.2, 1.0], -5.0, 5.0), &cfg).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((z.values[0] - 1.0).abs() < 1e-6 && (z.values[1] - 1.0).abs() < 1e-6, "{:?}", z.values);
    }

    #[test]
    fn active_box_on_rosenbrock() {
        // Minimizer restricted to z0 ≤ 0.5 lies on the bound, z1 = 0.25.
        let z0 = DecisionVector::new(vec![0.0, 0.0], vec![-2.0, -2.0], vec![0.5, 2.0]);
        let cfg = SolverConfig { tolerance: 1e-9, ..Default::default() };
        let (z, rep) = solve(&Rosenbrock, &z0, &cfg).unwrap();
        assert!(rep.converged);
        assert!((z.values[0] - 0.5).abs() < 1e-9);
        assert!((z.values[1] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn penalty_loop_pushes_onto_constraint() {
        let p = OutsideDisk { c: [0.3, 0.1] };
        let (z, rep) = solve(&p, &boxed(vec![0.3, 0.1], -3.0, 3.0), &SolverConfig::default()).unwrap();
        let n = (z.values[0].powi(2) + z.values[1].powi(2)).sqrt();
        assert!(rep.max_violation < 1e-3, "{rep:?}");
        assert!(n > 0.999 && n < 1.01, "{n}");
        assert!(rep.outer_iterations > 1);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let (z, rep) = solve(&Rosenbrock, &boxed(vec![1.0, 1.0], -5.0, 5.0), &SolverConfig::default()).unwrap();
        assert_eq!(z.values, vec![1.0, 1.0]);
        assert!(rep.inner_iterations <= 2);
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let cfg = SolverConfig { max_inner_iterations: 3, tolerance: 1e-12, ..Default::default() };
        let (z, rep) = solve(&Rosenbrock, &boxed(vec![-1.2, 1.0], -5.0, 5.0), &cfg).unwrap();
        assert!(!rep.converged);
        assert!(z.is_feasible());
    }

    #[test]
    fn trace_envelope_is_monotone_at_fixed_step() {
        let cfg = SolverConfig { tolerance: 1e-8, trace: true, ..Default::default() };
        let (_, rep) = solve(&Rosenbrock, &boxed(vec![-1.2, 1.0], -5.0, 5.0), &cfg).unwrap();
        assert!(!rep.trace.is_empty());
        for w in rep.trace.windows(2) {
            if w[0].gamma == w[1].gamma && w[0].outer == w[1].outer {
                assert!(w[1].envelope <= w[0].envelope + 1e-12 * w[0].envelope.abs(), "{w:?}");
            }
        }
        let mut buf = Vec::new();
        rep.write_trace(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("outer,iteration,penalty,cost"));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert_eq!(
            solve(&Rosenbrock, &boxed(vec![0.0; 3], -1.0, 1.0), &SolverConfig::default()).unwrap_err(),
            SolverError::Dimension { expected: 2, got: 3 }
        );
    }
}
