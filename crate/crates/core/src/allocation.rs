//! Thruster selection for the planar platform: a commanded planar wrench
//! `(F_x, F_y, τ_z)` is split over unidirectional thrusters by minimizing
//! `Σ tᵢ²` under `B t = w` and `0 ≤ tᵢ ≤ tᵢ_max`, then converted to PWM
//! duty cycles.

use crate::solver::dense_qp::{DenseQp, QpError};
use crate::spatial::Vec3;
use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("invalid thruster layout: {0}")]
    Layout(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("allocation failed: {0}")]
    Solve(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thruster {
    /// Body-frame position (m).
    pub position: Vec3,
    /// Body-frame unit thrust direction.
    pub direction: Vec3,
    /// Maximum thrust (N).
    pub max_thrust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrusterLayout {
    pub thrusters: Vec<Thruster>,
}

impl ThrusterLayout {
    pub fn new(thrusters: Vec<Thruster>) -> Result<Self, AllocationError> {
        let l = Self { thrusters };
        l.validate()?;
        Ok(l)
    }

    /// Square platform with two opposed thrusters on each side, placed at
    /// `±arm` from the side's center line. Pairs fire together for pure
    /// forces (`2·max_thrust`) or pure torques (`2·max_thrust·arm`).
    pub fn square(half_side: f64, arm: f64, max_thrust: f64) -> Self {
        let (h, a) = (half_side, arm);
        let t = |px: f64, py: f64, dx: f64, dy: f64| Thruster {
            position: Vec3::new(px, py, 0.0),
            direction: Vec3::new(dx, dy, 0.0),
            max_thrust,
        };
        Self {
            thrusters: vec![
                t(-h, a, 1.0, 0.0),
                t(-h, -a, 1.0, 0.0),
                t(h, a, -1.0, 0.0),
                t(h, -a, -1.0, 0.0),
                t(a, -h, 0.0, 1.0),
                t(-a, -h, 0.0, 1.0),
                t(a, h, 0.0, -1.0),
                t(-a, h, 0.0, -1.0),
            ],
        }
    }

    /// Slider-like layout: 0.7 N thrusters on 0.28 m arms, so paired firing
    /// gives 1.4 N and 0.392 N·m.
    pub fn slider() -> Self {
        Self::square(0.3, 0.28, 0.7)
    }

    pub fn len(&self) -> usize {
        self.thrusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thrusters.is_empty()
    }

    /// Rows `F_x, F_y, τ_z`, one column per thruster.
    pub fn effectiveness(&self) -> Matrix3xX<f64> {
        Matrix3xX::from_columns(
            &self
                .thrusters
                .iter()
                .map(|t| Vector3::new(t.direction.x, t.direction.y, t.position.cross(&t.direction).z))
                .collect::<Vec<_>>(),
        )
    }

    pub fn max_thrusts(&self) -> Vec<f64> {
        self.thrusters.iter().map(|t| t.max_thrust).collect()
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        let err = |m: String| Err(AllocationError::Layout(m));
        if self.thrusters.len() < 3 {
            return err("need at least three thrusters".into());
        }
        for (i, t) in self.thrusters.iter().enumerate() {
            if (t.direction.norm() - 1.0).abs() > 1e-9 {
                return err(format!("thruster {i} direction is not unit length"));
            }
            if !(t.max_thrust > 0.0 && t.max_thrust.is_finite()) {
                return err(format!("thruster {i} max thrust must be positive"));
            }
            if t.position.iter().any(|c| !c.is_finite()) {
                return err(format!("thruster {i} position is not finite"));
            }
        }
        let b = self.effectiveness();
        if b.rank(1e-9) < 3 {
            return err("effectiveness matrix must have rank 3".into());
        }
        Ok(())
    }

    /// One thruster per line: `px py pz dx dy dz max_thrust`; `#` starts a
    /// comment.
    pub fn read_table<R: BufRead>(reader: R) -> Result<Self, AllocationError> {
        let mut thrusters = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let v: Vec<f64> = body
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| AllocationError::Parse { line: n + 1, msg: e.to_string() })?;
            if v.len() != 7 {
                return Err(AllocationError::Parse { line: n + 1, msg: format!("expected 7 fields, got {}", v.len()) });
            }
            thrusters.push(Thruster {
                position: Vec3::new(v[0], v[1], v[2]),
                direction: Vec3::new(v[3], v[4], v[5]),
                max_thrust: v[6],
            });
        }
        Self::new(thrusters)
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<(), AllocationError> {
        writeln!(w, "# px py pz dx dy dz max_thrust")?;
        for t in &self.thrusters {
            let p = t.position;
            let d = t.direction;
            writeln!(w, "{} {} {} {} {} {} {}", p.x, p.y, p.z, d.x, d.y, d.z, t.max_thrust)?;
        }
        Ok(())
    }
}

/// Planar wrench `(F_x, F_y, τ_z)` in the body frame.
pub type PlanarWrench = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub thrusts: Vec<f64>,
    /// `B t`, equal to the request unless saturated.
    pub achieved: PlanarWrench,
    /// Request was outside the attainable set.
    pub saturated: bool,
}

/// Minimum-effort `t` with `B t = w` and bounds; `None` when `w` is not
/// attainable. Works in the null space of `B`: `t = t₀ + N y` with `t₀`
/// the least-norm solution, so the objective is `‖y‖²`.
fn min_effort(b: &DMatrix<f64>, w: &DVector<f64>, tmax: &[f64]) -> Result<Option<DVector<f64>>, QpError> {
    let n = b.ncols();
    let svd = b.clone().svd(true, true);
    let t0 = svd.solve(w, 1e-12).expect("SVD with both factors");
    let vt = svd.v_t.as_ref().expect("v_t computed");
    // Full right-singular basis via the complement of B's row space.
    let full = DMatrix::<f64>::identity(n, n) - vt.transpose() * vt;
    let null = {
        let s = full.svd(true, false);
        let u = s.u.expect("u computed");
        let k = s.singular_values.iter().filter(|&&v| v > 0.5).count();
        u.columns(0, k).into_owned()
    };
    let k = null.ncols();
    // t₀ + N y ≥ 0   and   −(t₀ + N y) ≥ −t_max
    let mut c = DMatrix::zeros(k, 2 * n);
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        let row = null.row(i).transpose();
        c.set_column(i, &row);
        d[i] = -t0[i];
        c.set_column(n + i, &(-row));
        d[n + i] = t0[i] - tmax[i];
    }
    let qp = DenseQp { g: DMatrix::identity(k, k), a: DVector::zeros(k), c, d };
    match qp.solve() {
        Ok(sol) => {
            let mut t = t0 + null * sol.x;
            for (ti, m) in t.iter_mut().zip(tmax) {
                *ti = ti.clamp(0.0, *m);
            }
            Ok(Some(t))
        }
        Err(QpError::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Closest attainable wrench (least squares over the thrust box).
fn closest(b: &DMatrix<f64>, w: &DVector<f64>, tmax: &[f64]) -> Result<DVector<f64>, QpError> {
    let n = b.ncols();
    let eps = 1e-9;
    let g = b.tr_mul(b) + DMatrix::identity(n, n) * eps;
    let a = -(b.tr_mul(w));
    let mut c = DMatrix::zeros(n, 2 * n);
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        c[(i, n + i)] = -1.0;
        d[n + i] = -tmax[i];
    }
    let sol = DenseQp { g, a, c, d }.solve()?;
    Ok(DVector::from_iterator(n, sol.x.iter().zip(tmax).map(|(v, m)| v.clamp(0.0, *m))))
}

/// Split a planar wrench over the thrusters.
pub fn allocate(wrench: &PlanarWrench, layout: &ThrusterLayout) -> Result<Allocation, AllocationError> {
    let b = DMatrix::from_iterator(3, layout.len(), layout.effectiveness().iter().copied());
    let tmax = layout.max_thrusts();
    let w = DVector::from_column_slice(wrench.as_slice());
    let (t, saturated) = match min_effort(&b, &w, &tmax)? {
        Some(t) => (t, false),
        None => {
            let t_a = closest(&b, &w, &tmax)?;
            let w_star = &b * &t_a;
            let t = min_effort(&b, &w_star, &tmax)?.unwrap_or(t_a);
            (t, true)
        }
    };
    let achieved = &b * &t;
    Ok(Allocation { thrusts: t.iter().copied().collect(), achieved: Vector3::new(achieved[0], achieved[1], achieved[2]), saturated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwmCommand {
    pub duty: Vec<f64>,
    /// PWM period (s).
    pub period: f64,
    /// Minimum valve on-time (s).
    pub min_on_time: f64,
}

impl PwmCommand {
    /// Mean thrust delivered over one period.
    pub fn mean_thrusts(&self, layout: &ThrusterLayout) -> Vec<f64> {
        self.duty.iter().zip(&layout.thrusters).map(|(d, t)| d * t.max_thrust).collect()
    }
}

/// Duty cycles with minimum on-time gating: on-times below the minimum are
/// rounded to zero or to the minimum, whichever is closer in impulse
/// (ties go to zero).
pub fn to_pwm(thrusts: &[f64], layout: &ThrusterLayout, period: f64, min_on_time: f64) -> PwmCommand {
    let duty = thrusts
        .iter()
        .zip(&layout.thrusters)
        .map(|(t, th)| {
            let d = (t / th.max_thrust).clamp(0.0, 1.0);
            let on = d * period;
            if on > 0.0 && on < min_on_time {
                if on > min_on_time - on {
                    min_on_time / period
                } else {
                    0.0
                }
            } else {
                d
            }
        })
        .collect();
    PwmCommand { duty, period, min_on_time }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alloc(w: [f64; 3]) -> Allocation {
        allocate(&PlanarWrench::new(w[0], w[1], w[2]), &ThrusterLayout::slider()).unwrap()
    }

    #[test]
    fn slider_layout_is_valid() {
        let l = ThrusterLayout::slider();
        l.validate().unwrap();
        assert_eq!(l.len(), 8);
    }

    #[test]
    fn zero_wrench_fires_nothing() {
        let a = alloc([0.0; 3]);
        assert!(a.thrusts.iter().all(|&t| t.abs() < 1e-12));
        assert!(!a.saturated);
    }

    #[test]
    fn pure_forward_force_uses_rear_pair() {
        let a = alloc([1.0, 0.0, 0.0]);
        assert!((a.thrusts[0] - 0.5).abs() < 1e-9 && (a.thrusts[1] - 0.5).abs() < 1e-9, "{:?}", a.thrusts);
        assert!(a.thrusts[2..].iter().all(|&t| t.abs() < 1e-9));
        assert!(a.achieved.z.abs() < 1e-9);
    }

    #[test]
    fn paired_limits_match_platform() {
        let a = alloc([1.4, 0.0, 0.0]);
        assert!(!a.saturated);
        let a = alloc([0.0, 0.0, 0.392]);
        assert!(!a.saturated);
        assert!((a.achieved.z - 0.392).abs() < 1e-9);
        let a = alloc([5.0, 0.0, 0.0]);
        assert!(a.saturated);
        assert!((a.achieved.x - 1.4).abs() < 1e-6, "{:?}", a.achieved);
    }

    #[test]
    fn pwm_examples() {
        let l = ThrusterLayout::slider();
        let full = to_pwm(&[0.7; 8], &l, 0.1, 0.01);
        assert!(full.duty.iter().all(|&d| d == 1.0));
        let zero = to_pwm(&[0.0; 8], &l, 0.1, 0.01);
        assert!(zero.duty.iter().all(|&d| d == 0.0));
        // 4 ms of a 100 ms period rounds down, 6 ms rounds up.
        let mut t = [0.0; 8];
        t[0] = 0.7 * 0.04;
        t[1] = 0.7 * 0.06;
        let p = to_pwm(&t, &l, 0.1, 0.01);
        assert_eq!(p.duty[0], 0.0);
        assert!((p.duty[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn layout_file_round_trip() {
        let l = ThrusterLayout::slider();
        let mut buf = Vec::new();
        l.write_table(&mut buf).unwrap();
        let back = ThrusterLayout::read_table(&buf[..]).unwrap();
        assert_eq!(back, l);
        assert!(ThrusterLayout::read_table("1 2 3\n".as_bytes()).is_err());
        assert!(ThrusterLayout::read_table("0 0 0 1 1 0 1\n0 0 0 1 0 0 1\n0 0 0 0 1 0 1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn attainable_wrenches_are_reproduced(fx in -1.0..1.0f64, fy in -1.0..1.0f64, tz in -0.2..0.2f64) {
            // |F_x| + |F_y|·0 + ... stays inside the polytope for these ranges.
            let a = alloc([fx * 0.7, fy * 0.7, tz]);
            prop_assert!(!a.saturated);
            prop_assert!((a.achieved - PlanarWrench::new(fx * 0.7, fy * 0.7, tz)).norm() < 1e-9);
            prop_assert!(a.thrusts.iter().all(|&t| (0.0..=0.7).contains(&t)));
        }

        #[test]
        fn mirror_symmetry(fx in -1.0..1.0f64, fy in -1.0..1.0f64, tz in -0.3..0.3f64) {
            let a = alloc([fx, fy, tz]);
            let m = alloc([fx, -fy, -tz]);
            let perm = [1, 0, 3, 2, 6, 7, 4, 5];
            for (i, &j) in perm.iter().enumerate() {
                prop_assert!((a.thrusts[i] - m.thrusts[j]).abs() < 1e-6, "{:?} vs {:?}", a.thrusts, m.thrusts);
            }
        }
    }
}
