//! Small dense strictly convex QP with inequality constraints, solved by the
//! Goldfarb–Idnani dual active-set method:
//!
//! ```text
//! minimize ½ xᵀ G x + aᵀ x   subject to   cᵢᵀ x ≥ dᵢ
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    /// Constraint normals as columns.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Indices of active constraints.
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
}

impl DenseQp {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + self.a.dot(x)
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.g.nrows();
        let m = self.c.ncols();
        let chol = self.g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let g_inv = chol.inverse();
        let mut x = -(&g_inv * &self.a);
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let scale = 1.0 + self.d.amax() + self.c.amax();
        let tol = 1e-12 * scale;

        for _ in 0..(50 * (m + n + 1)) {
            // Most violated constraint.
            let s = self.c.tr_mul(&x) - &self.d;
            let Some((p, sp)) =
                (0..m).filter(|i| !active.contains(i)).map(|i| (i, s[i])).min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                return Ok(self.finish(x, active, u));
            };
            if sp >= -tol {
                return Ok(self.finish(x, active, u));
            }
            let np = self.c.column(p).into_owned();
            let mut u_p = 0.0;
            loop {
                let (z, r) = directions(&g_inv, &self.c, &active, &np);
                let partial = active
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| r[*k] > 1e-14)
                    .map(|(k, _)| (k, u[k] / r[k]))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                let zn = z.dot(&np);
                let s_now = np.dot(&x) - self.d[p];
                let full = if zn.abs() > 1e-14 * (1.0 + np.norm_squared()) { Some(-s_now / zn) } else { None };
                match (full, partial) {
                    (None, None) => return Err(QpError::Infeasible),
                    (None, Some((k, t))) => {
                        for (j, uj) in u.iter_mut().enumerate() {
                            *uj -= t * r[j];
                        }
                        u_p += t;
                        active.remove(k);
                        u.remove(k);
                    }
                    (Some(t2), partial) => {
                        let (t, drop) = match partial {
                            Some((k, t1)) if t1 < t2 => (t1, Some(k)),
                            _ => (t2, None),
                        };
                        x += &z * t;
                        for (j, uj) in u.iter_mut().enumerate() {
                            *uj -= t * r[j];
                        }
                        u_p += t;
                        match drop {
                            Some(k) => {
                                active.remove(k);
                                u.remove(k);
                            }
                            None => {
                                active.push(p);
                                u.push(u_p);
                                break;
                            }
                        }
                    }
                }
            }
        }
        Err(QpError::IterationLimit)
    }

    fn finish(&self, x: DVector<f64>, active: Vec<usize>, multipliers: Vec<f64>) -> QpSolution {
        QpSolution { value: self.value(&x), x, active, multipliers }
    }
}

/// Primal step `z = H n` and dual step `r = N* n` for the active normals.
fn directions(g_inv: &DMatrix<f64>, c: &DMatrix<f64>, active: &[usize], np: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let gn = g_inv * np;
    if active.is_empty() {
        return (gn, DVector::zeros(0));
    }
    let nmat = DMatrix::from_columns(&active.iter().map(|&i| c.column(i)).collect::<Vec<_>>());
    let gin = g_inv * &nmat;
    let m = nmat.tr_mul(&gin);
    // Active normals stay linearly independent, so `m` is invertible.
    let r = m.clone().lu().solve(&nmat.tr_mul(&gn)).unwrap_or_else(|| {
        m.pseudo_inverse(1e-12).expect("pseudo-inverse of a square matrix") * nmat.tr_mul(&gn)
    });
    let z = gn - gin * &r;
    (z, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum() {
        let qp = DenseQp {
            g: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]),
            a: DVector::from_vec(vec![-2.0, -4.0]),
            c: DMatrix::zeros(2, 0),
            d: DVector::zeros(0),
        };
        let s = qp.solve().unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_instance() {
        // min x1² + x2² − 2x1 − 5x2 with the classic three-sided region;
        // optimum (1.4, 1.7).
        let qp = DenseQp {
            g: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            a: DVector::from_vec(vec![-2.0, -5.0]),
            c: DMatrix::from_column_slice(2, 5, &[1.0, -2.0, -1.0, -2.0, -1.0, 2.0, 1.0, 0.0, 0.0, 1.0]),
            d: DVector::from_vec(vec![-2.0, -6.0, -2.0, 0.0, 0.0]),
        };
        let s = qp.solve().unwrap();
        assert!((s.x[0] - 1.4).abs() < 1e-10 && (s.x[1] - 1.7).abs() < 1e-10, "{:?}", s.x);
        assert!(s.multipliers.iter().all(|&u| u >= -1e-12));
    }

    #[test]
    fn infeasible_is_detected() {
        let qp = DenseQp {
            g: DMatrix::identity(1, 1),
            a: DVector::zeros(1),
            c: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            d: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert_eq!(qp.solve().unwrap_err(), QpError::Infeasible);
    }
}
