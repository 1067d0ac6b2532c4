//! The PANOC solver on a box-constrained Rosenbrock problem, with the
//! iteration trace enabled.
//!
//!     cargo run --release --example solver_rosenbrock

use dockswarm::solver::{solve, DecisionVector, Objective, SolverConfig, SolverError};

struct Rosenbrock;

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, z: &[f64], _penalty: f64) -> Result<f64, SolverError> {
        Ok((1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2))
    }

    fn value_and_gradient(&self, z: &[f64], penalty: f64, grad: &mut [f64]) -> Result<f64, SolverError> {
        let r = z[1] - z[0] * z[0];
        grad[0] = -2.0 * (1.0 - z[0]) - 400.0 * z[0] * r;
        grad[1] = 200.0 * r;
        self.value(z, penalty)
    }
}

fn main() -> Result<(), SolverError> {
    let cfg = SolverConfig { max_inner_iterations: 2000, tolerance: 1e-9, trace: true, ..SolverConfig::default() };
    for (lo, hi) in [([-2.0, -2.0], [2.0, 2.0]), ([-2.0, -2.0], [0.5, 2.0])] {
        let z0 = DecisionVector::new(vec![-1.2, 1.0], lo.to_vec(), hi.to_vec());
        let (z, report) = solve(&Rosenbrock, &z0, &cfg)?;
        println!(
            "box {lo:?}..{hi:?}: z = {:.6?}  f = {:.3e}  iterations = {}  residual = {:.1e}  converged = {}",
            z.values, report.cost, report.inner_iterations, report.gradient_norm, report.converged
        );
        if let Some(last) = report.trace.last() {
            println!("  last trace row: {last:?}");
        }
    }
    Ok(())
}
