//! Rigid-body dynamics of chasers (actuated) and the target (free drift).
//!
//! Attitude kinematics use the body-frame angular velocity:
//! `q̇ = ½ q ⊗ [0; ω]`, with `q` mapping body vectors into the world frame.
//! Forces are commanded in the body frame and rotated into the world frame;
//! torques act directly in the body frame through Euler's equation.

use crate::spatial::{quat_multiply, rotate_vector, Quat, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {0} in dynamics input")]
    NonFinite(&'static str),
    #[error("invalid inertial parameters: {0}")]
    InvalidInertia(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidState {
    pub p: Vec3,
    pub q: Quat,
    pub v: Vec3,
    /// Body-frame angular velocity.
    pub w: Vec3,
}

impl Default for RigidState {
    fn default() -> Self {
        Self::at_rest(Vec3::zeros(), Quat::IDENTITY)
    }
}

impl RigidState {
    pub fn at_rest(p: Vec3, q: Quat) -> Self {
        Self { p, q, v: Vec3::zeros(), w: Vec3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.is_finite())
            && self.q.is_finite()
            && self.v.iter().all(|c| c.is_finite())
            && self.w.iter().all(|c| c.is_finite())
    }

    /// `[p, q, v, ω]` flattened (13 values).
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.p.x, self.p.y, self.p.z, self.q.w, self.q.x, self.q.y, self.q.z, self.v.x, self.v.y,
            self.v.z, self.w.x, self.w.y, self.w.z,
        ]
    }
}

/// Time derivative of a [`RigidState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dp: Vec3,
    pub dq: Quat,
    pub dv: Vec3,
    pub dw: Vec3,
}

impl StateDerivative {
    pub fn zero() -> Self {
        Self { dp: Vec3::zeros(), dq: Quat::new(0.0, 0.0, 0.0, 0.0), dv: Vec3::zeros(), dw: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertialParams {
    pub mass: f64,
    #[serde(with = "crate::serde_mat::mat3")]
    pub inertia: Matrix3<f64>,
}

impl Default for InertialParams {
    /// Unit-mass, unit-inertia cuboid used when a scenario leaves the
    /// chaser's inertial properties unspecified.
    fn default() -> Self {
        Self { mass: 1.0, inertia: Matrix3::identity() }
    }
}

impl InertialParams {
    pub const SLIDER_MASS: f64 = 4.436;
    pub const SLIDER_IZZ: f64 = 1.092;

    pub fn new(mass: f64, inertia: Matrix3<f64>) -> Result<Self, DynamicsError> {
        let p = Self { mass, inertia };
        p.validate()?;
        Ok(p)
    }

    /// Planar air-bearing platform. Only the z moment matters while roll and
    /// pitch rates are pinned.
    pub fn slider() -> Self {
        Self { mass: Self::SLIDER_MASS, inertia: Matrix3::identity() * Self::SLIDER_IZZ }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(DynamicsError::InvalidInertia(format!("mass {} must be positive", self.mass)));
        }
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-12 * self.inertia.abs().max() {
            return Err(DynamicsError::InvalidInertia("inertia matrix is not symmetric".into()));
        }
        let eig = self.inertia.symmetric_eigenvalues();
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(DynamicsError::InvalidInertia("inertia matrix is not positive definite".into()));
        }
        Ok(())
    }

    pub fn inverse_inertia(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().expect("validated inertia is invertible")
    }
}

/// Body-frame force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z]
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.force.norm_squared() + self.torque.norm_squared()).sqrt()
    }
}

/// `q ⊗ [0; ω]`, the un-halved attitude rate for body-frame `ω`.
pub(crate) fn attitude_rate(q: Quat, w: Vec3) -> Quat {
    quat_multiply(q, Quat::from_scalar_vector(0.0, w)).scale(0.5)
}

pub fn chaser_derivative(
    x: &RigidState,
    u: &Wrench,
    params: &InertialParams,
) -> Result<StateDerivative, DynamicsError> {
    if !x.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(DynamicsError::NonFinite("wrench"));
    }
    let i = &params.inertia;
    let gyro = x.w.cross(&(i * x.w));
    Ok(StateDerivative {
        dp: x.v,
        dv: rotate_vector(x.q, u.force) / params.mass,
        dq: attitude_rate(x.q, x.w),
        dw: params.inverse_inertia() * (u.torque - gyro),
    })
}

pub fn target_derivative(x: &RigidState) -> StateDerivative {
    StateDerivative { dp: x.v, dv: Vec3::zeros(), dq: attitude_rate(x.q, x.w), dw: Vec3::zeros() }
}

/// Forward-Euler step followed by quaternion renormalization.
pub fn euler_step(x: &RigidState, dx: &StateDerivative, dt: f64) -> RigidState {
    debug_assert!(dt > 0.0);
    RigidState {
        p: x.p + dx.dp * dt,
        q: x.q.add(&dx.dq.scale(dt)).normalized(),
        v: x.v + dx.dv * dt,
        w: x.w + dx.dw * dt,
    }
}

/// Which translational (x, y, z) and rotational (x, y, z) degrees of freedom
/// are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanarMask {
    pub enabled: [bool; 6],
}

impl Default for PlanarMask {
    fn default() -> Self {
        Self::full()
    }
}

impl PlanarMask {
    pub fn full() -> Self {
        Self { enabled: [true; 6] }
    }

    /// x/y translation and rotation about z.
    pub fn planar() -> Self {
        Self { enabled: [true, true, false, false, false, true] }
    }

    pub fn is_full(&self) -> bool {
        self.enabled.iter().all(|&e| e)
    }

    /// Zero the masked wrench components.
    pub fn mask_wrench(&self, u: &Wrench) -> Wrench {
        let mut a = u.to_array();
        for (c, &on) in a.iter_mut().zip(&self.enabled) {
            if !on {
                *c = 0.0;
            }
        }
        Wrench::from_array(&a)
    }

    /// Pin the masked translations (position and velocity) and rotation
    /// rates to zero.
    pub fn mask_state(&self, x: &RigidState) -> RigidState {
        let mut out = *x;
        for k in 0..3 {
            if !self.enabled[k] {
                out.p[k] = 0.0;
                out.v[k] = 0.0;
            }
            if !self.enabled[3 + k] {
                out.w[k] = 0.0;
            }
        }
        out
    }
}

pub fn apply_planar_mask(x: &RigidState, u: &Wrench, mask: &PlanarMask) -> (RigidState, Wrench) {
    (mask.mask_state(x), mask.mask_wrench(u))
}

/// Integrate a chaser over `duration` with a constant wrench using
/// fixed substeps of at most `substep`.
pub fn propagate_chaser(
    x: &RigidState,
    u: &Wrench,
    params: &InertialParams,
    mask: &PlanarMask,
    extra_accel: Vec3,
    duration: f64,
    substep: f64,
) -> Result<RigidState, DynamicsError> {
    let n = substeps(duration, substep);
    if n == 0 {
        return Ok(*x);
    }
    let h = duration / n as f64;
    let (mut s, u) = apply_planar_mask(x, u, mask);
    for _ in 0..n {
        let mut d = chaser_derivative(&s, &u, params)?;
        d.dv += extra_accel;
        s = mask.mask_state(&euler_step(&s, &d, h));
    }
    Ok(s)
}

pub fn propagate_target(x: &RigidState, duration: f64, substep: f64) -> RigidState {
    let n = substeps(duration, substep);
    if n == 0 {
        return *x;
    }
    let h = duration / n as f64;
    let mut s = *x;
    for _ in 0..n {
        s = euler_step(&s, &target_derivative(&s), h);
    }
    s
}

fn substeps(duration: f64, substep: f64) -> usize {
    if duration <= 0.0 {
        return 0;
    }
    // Round first so that e.g. 0.1 / 0.001 gives exactly 100 steps.
    let ratio = duration / substep;
    let r = ratio.round();
    if (ratio - r).abs() < 1e-9 * ratio.max(1.0) {
        r as usize
    } else {
        ratio.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::quat_to_angle;
    use std::f64::consts::PI;

    fn diag(a: f64, b: f64, c: f64) -> InertialParams {
        InertialParams::new(1.0, Matrix3::from_diagonal(&Vec3::new(a, b, c))).unwrap()
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let x = RigidState::default();
        let d = chaser_derivative(&x, &Wrench::zero(), &InertialParams::default()).unwrap();
        assert_eq!(d.dp, Vec3::zeros());
        assert_eq!(d.dv, Vec3::zeros());
        assert_eq!(d.dw, Vec3::zeros());
        assert_eq!(d.dq.to_array(), [0.0; 4]);
    }

    #[test]
    fn newton_second_law() {
        let x = RigidState::default();
        let u = Wrench::new(Vec3::x(), Vec3::zeros());
        let d = chaser_derivative(&x, &u, &InertialParams::default()).unwrap();
        assert_eq!(d.dv, Vec3::x());
        assert_eq!(d.dw, Vec3::zeros());
        assert_eq!(d.dp, Vec3::zeros());
    }

    #[test]
    fn force_is_rotated_into_world() {
        let x = RigidState::at_rest(Vec3::zeros(), Quat::from_yaw(PI / 2.0));
        let u = Wrench::new(Vec3::x(), Vec3::zeros());
        let d = chaser_derivative(&x, &u, &InertialParams::default()).unwrap();
        assert!((d.dv - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn gyroscopic_term_matches_cross_product_oracle() {
        // ω × Iω with I = diag(1,2,3), ω = (0.1,0.2,0.3):
        // Iω = (0.1, 0.4, 0.9)
        // ω × Iω = (0.2·0.9 − 0.3·0.4, 0.3·0.1 − 0.1·0.9, 0.1·0.4 − 0.2·0.1)
        //        = (0.06, −0.06, 0.02)
        // ω̇ = −I⁻¹(ω × Iω) = (−0.06, 0.03, −0.02/3)
        let mut x = RigidState::default();
        x.w = Vec3::new(0.1, 0.2, 0.3);
        let d = chaser_derivative(&x, &Wrench::zero(), &diag(1.0, 2.0, 3.0)).unwrap();
        let expected = Vec3::new(-0.06, 0.03, -0.02 / 3.0);
        assert!((d.dw - expected).norm() < 1e-15, "{:?}", d.dw);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut x = RigidState::default();
        x.v.x = f64::NAN;
        assert_eq!(
            chaser_derivative(&x, &Wrench::zero(), &InertialParams::default()),
            Err(DynamicsError::NonFinite("state"))
        );
        let u = Wrench::new(Vec3::new(f64::INFINITY, 0.0, 0.0), Vec3::zeros());
        assert!(chaser_derivative(&RigidState::default(), &u, &InertialParams::default()).is_err());
    }

    #[test]
    fn invalid_inertia_is_rejected() {
        assert!(InertialParams::new(0.0, Matrix3::identity()).is_err());
        assert!(InertialParams::new(1.0, -Matrix3::identity()).is_err());
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.5;
        assert!(InertialParams::new(1.0, m).is_err());
    }

    #[test]
    fn target_derivative_examples() {
        let x = RigidState::at_rest(Vec3::new(1.0, 2.0, 3.0), Quat::from_yaw(0.3));
        let d = target_derivative(&x);
        assert_eq!(d.dq.to_array(), [0.0; 4]);

        let mut x = RigidState::default();
        x.v = Vec3::x();
        // piecewise-constant velocity: one Euler step of 2 s is exact
        let s = euler_step(&x, &target_derivative(&x), 2.0);
        assert_eq!(s.p, Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn target_spin_matches_quaternion_exponential() {
        let mut x = RigidState::default();
        x.w = Vec3::new(0.0, 0.0, PI);
        let s = propagate_target(&x, 1.0, 1e-4);
        // closed form: exp(½ ω t) = (cos(π/2), 0, 0, sin(π/2))
        let expected = Quat::from_rotation_vector(x.w * 1.0);
        let err = quat_to_angle((s.q * expected.conjugate()).canonical());
        assert!(err < 1e-3, "error {err}");
        assert!((quat_to_angle(s.q) - PI).abs() < 1e-3);
    }

    #[test]
    fn euler_step_examples() {
        let x = RigidState {
            p: Vec3::new(1.0, 2.0, 3.0),
            q: Quat::from_yaw(0.4),
            v: Vec3::new(0.1, 0.0, 0.0),
            w: Vec3::new(0.0, 0.2, 0.0),
        };
        assert_eq!(euler_step(&x, &StateDerivative::zero(), 0.1), x);

        let mut d = StateDerivative::zero();
        d.dv = Vec3::x();
        let s = euler_step(&x, &d, 0.1);
        assert!((s.v.x - 0.2).abs() < 1e-15);
    }

    #[test]
    fn spinning_body_matches_closed_form() {
        // Symmetric body spinning about a principal axis: closed-form exp map.
        let p = InertialParams::default();
        let mut x = RigidState::default();
        x.w = Vec3::new(0.3, -0.2, 0.5);
        let s = propagate_chaser(&x, &Wrench::zero(), &p, &PlanarMask::full(), Vec3::zeros(), 1.0, 1e-4).unwrap();
        let expected = Quat::from_rotation_vector(x.w);
        let err = quat_to_angle((s.q * expected.conjugate()).canonical());
        assert!(err < 1e-3, "error {err}");
        assert!((s.q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn torque_free_energy_and_momentum() {
        let p = diag(1.0, 2.0, 3.0);
        let mut x = RigidState::default();
        x.v = Vec3::new(0.1, 0.0, -0.2);
        x.w = Vec3::new(0.1, 0.2, 0.3);
        let energy = |s: &RigidState| 0.5 * p.mass * s.v.norm_squared() + 0.5 * s.w.dot(&(p.inertia * s.w));
        let momentum = |s: &RigidState| rotate_vector(s.q, p.inertia * s.w);
        let (e0, h0) = (energy(&x), momentum(&x));
        let mut s = x;
        for _ in 0..10 {
            s = propagate_chaser(&s, &Wrench::zero(), &p, &PlanarMask::full(), Vec3::zeros(), 1.0, 1e-4).unwrap();
            assert!((s.q.norm() - 1.0).abs() < 1e-9);
        }
        assert!((energy(&s) - e0).abs() / e0 < 1e-3);
        assert!((momentum(&s) - h0).norm() / h0.norm() < 1e-3);
    }

    #[test]
    fn planar_mask_examples() {
        let u = Wrench::from_array(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = RigidState { p: Vec3::new(1.0, 2.0, 3.0), q: Quat::IDENTITY, v: Vec3::new(4.0, 5.0, 6.0), w: Vec3::new(7.0, 8.0, 9.0) };
        let (xf, uf) = apply_planar_mask(&x, &u, &PlanarMask::full());
        assert_eq!((xf, uf), (x, u));
        let (xp, up) = apply_planar_mask(&x, &u, &PlanarMask::planar());
        assert_eq!(up.to_array(), [1.0, 2.0, 0.0, 0.0, 0.0, 6.0]);
        assert_eq!(xp.p.z, 0.0);
        assert_eq!(xp.v.z, 0.0);
        assert_eq!((xp.w.x, xp.w.y, xp.w.z), (0.0, 0.0, 9.0));
    }

    #[test]
    fn planar_pins_stay_exact() {
        let p = InertialParams::slider();
        let mask = PlanarMask::planar();
        let mut s = RigidState::at_rest(Vec3::new(0.2, -0.1, 0.0), Quat::from_yaw(0.5));
        let u = Wrench::from_array(&[0.3, -0.2, 0.7, 0.1, -0.1, 0.05]);
        for _ in 0..50 {
            s = propagate_chaser(&s, &u, &p, &mask, Vec3::zeros(), 0.1, 1e-3).unwrap();
            assert_eq!(s.p.z, 0.0);
            assert_eq!(s.v.z, 0.0);
            assert_eq!(s.w.x, 0.0);
            assert_eq!(s.w.y, 0.0);
            assert_eq!(s.q.x, 0.0);
            assert_eq!(s.q.y, 0.0);
        }
    }

    #[test]
    fn target_quaternion_stays_unit_over_long_horizon() {
        let mut x = RigidState::default();
        x.w = Vec3::new(1.5e-2, 4.5e-2, 3.0e-2);
        x.v = Vec3::new(1.5e-2, 0.75e-2, 3.0e-2);
        let s = propagate_target(&x, 1000.0, 0.01);
        assert!((s.q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn substep_count_is_exact_for_round_ratios() {
        assert_eq!(substeps(0.1, 0.001), 100);
        assert_eq!(substeps(1.0 / 30.0, 0.001), 34);
        assert_eq!(substeps(0.0, 0.001), 0);
    }
}
