//! Quaternion and rigid-transform algebra.
//!
//! Quaternions are scalar-first `(w, x, y, z)` Hamilton quaternions. A unit
//! quaternion `q` maps body-frame vectors into the world frame through
//! `q ⊗ [0; v] ⊗ q*`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::ops::{Mul, Neg};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_scalar_vector(w: f64, v: Vec3) -> Self {
        Self::new(w, v.x, v.y, v.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_scalar_vector(c, axis * (s / n))
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    pub fn from_rotation_vector(rv: Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            return Self::from_scalar_vector(1.0, rv * 0.5).normalized();
        }
        Self::from_axis_angle(rv, angle)
    }

    /// Yaw-only rotation about world z.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), yaw)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, o: &Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Flip sign so that `w >= 0`.
    pub fn canonical(&self) -> Quat {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation matrix equal to `v ↦ q v q*`. For non-unit `q` this includes
    /// the `|q|²` scale, matching the sandwich product exactly.
    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            w * w + x * x - y * y - z * z,
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        )
    }

    /// Unit quaternion from a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Quat {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }

    /// Rotation vector (axis·angle) of the canonical representative.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.canonical();
        let v = q.vector();
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    /// Heading about world z of the body x-axis.
    pub fn yaw(&self) -> f64 {
        let r = self.to_rotation_matrix();
        r[(1, 0)].atan2(r[(0, 0)])
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        quat_multiply(self, b)
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product `a ⊗ b`.
pub fn quat_multiply(a: Quat, b: Quat) -> Quat {
    Quat::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// `q ⊗ [0; v] ⊗ q*`, expanded. Exactly even in `q`.
pub fn rotate_vector(q: Quat, v: Vec3) -> Vec3 {
    let r = q.vector();
    let w = q.w;
    v * (w * w - r.dot(&r)) + r * (2.0 * r.dot(&v)) + r.cross(&v) * (2.0 * w)
}

/// Attitude error `q ⊗ q_ref*`, canonicalized to `w >= 0`.
pub fn quat_error(q: Quat, q_ref: Quat) -> Quat {
    quat_multiply(q, q_ref.conjugate()).canonical()
}

/// Geodesic angle of a unit quaternion, in `[0, π]`.
pub fn quat_to_angle(q: Quat) -> f64 {
    2.0 * q.w.abs().clamp(0.0, 1.0).acos()
}

/// Rigid transform: `x ↦ rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PoseSE3 {
    pub const IDENTITY: PoseSE3 = PoseSE3 {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        rotate_vector(self.rotation, p) + self.translation
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv = self.rotation.conjugate();
        PoseSE3::new(inv, -rotate_vector(inv, self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3::new(
            (self.rotation * other.rotation).normalized(),
            self.transform_point(other.translation),
        )
    }
}
