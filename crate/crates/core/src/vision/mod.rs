//! Synthetic monocular camera: marker layouts on the target, pinhole
//! projection with detection noise, and PnP pose recovery.
//!
//! Camera convention: the optical frame has `+z` along the optical axis,
//! `+x` to the right of the image and `+y` down. The camera sits at the
//! chaser's center looking along the chaser body `+X` axis, with body `+Z`
//! pointing up in the image. The fixed body-to-optical rotation is
//! [`CAMERA_FROM_BODY`].

mod pnp;

pub use pnp::{solve_pnp, PnpError, PnpOptions};

use crate::spatial::{PoseSE3, Quat, Vec3};
use nalgebra::{Matrix3, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use thiserror::Error;

pub type Pixel = Vector2<f64>;

/// Rotation taking chaser body vectors into the camera optical frame:
/// `x_cam = -y_body`, `y_cam = -z_body`, `z_cam = x_body`.
pub fn camera_from_body() -> Quat {
    Quat::from_rotation_matrix(&CAMERA_FROM_BODY)
}

pub const CAMERA_FROM_BODY: Matrix3<f64> =
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid marker layout: {0}")]
    InvalidLayout(String),
    #[error("layout parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(VisionError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(VisionError::InvalidIntrinsics("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, px: &Pixel) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub id: u32,
    /// Corner positions in the target frame, ordered around the square.
    pub corners: [Vec3; 4],
    /// Outward normal in the target frame.
    pub normal: Vec3,
}

impl Marker {
    pub fn center(&self) -> Vec3 {
        self.corners.iter().sum::<Vec3>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkerLayout {
    pub markers: Vec<Marker>,
}

impl MarkerLayout {
    pub fn new(markers: Vec<Marker>) -> Result<Self, VisionError> {
        let layout = Self { markers };
        layout.validate()?;
        Ok(layout)
    }

    /// One square marker of side `marker_side` centered on each face of a
    /// cube of side `cube_side`. Ids follow +x, −x, +y, −y, +z, −z.
    pub fn cube(cube_side: f64, marker_side: f64) -> Self {
        let h = 0.5 * cube_side;
        let m = 0.5 * marker_side;
        let faces = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
        let markers = faces
            .iter()
            .enumerate()
            .map(|(id, &n)| {
                // In-plane basis with (a, b, n) right-handed.
                let helper = if n.z.abs() > 0.5 { Vec3::x() } else { Vec3::z() };
                let a = helper.cross(&n).normalize();
                let b = n.cross(&a);
                let c = n * h;
                let corners = [c - a * m + b * m, c + a * m + b * m, c + a * m - b * m, c - a * m - b * m];
                Marker { id: id as u32, corners, normal: n }
            })
            .collect();
        Self { markers }
    }

    /// Cube layout with the top and bottom markers removed, for a target
    /// resting on a table.
    pub fn planar_box(side: f64, marker_side: f64) -> Self {
        let mut l = Self::cube(side, marker_side);
        l.markers.retain(|m| m.normal.z.abs() < 0.5);
        l
    }

    pub fn marker(&self, id: u32) -> Option<&Marker> {
        self.markers.iter().find(|m| m.id == id)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let mut ids = HashSet::new();
        for m in &self.markers {
            if !ids.insert(m.id) {
                return Err(VisionError::InvalidLayout(format!("duplicate marker id {}", m.id)));
            }
            let c = m.corners;
            let n = (c[1] - c[0]).cross(&(c[3] - c[0]));
            let scale = (c[1] - c[0]).norm() * (c[3] - c[0]).norm();
            if !(n.norm() > 1e-9 * scale.max(1e-12)) || scale == 0.0 {
                return Err(VisionError::InvalidLayout(format!("marker {} corners are collinear", m.id)));
            }
            let off = (c[2] - c[0]).dot(&n.normalize());
            if off.abs() > 1e-6 * scale.sqrt() {
                return Err(VisionError::InvalidLayout(format!("marker {} corners are not coplanar", m.id)));
            }
            if !(m.normal.norm() > 0.0) {
                return Err(VisionError::InvalidLayout(format!("marker {} has a zero normal", m.id)));
            }
        }
        Ok(())
    }

    /// Whitespace-separated table, one marker per line:
    /// `id x0 y0 z0 x1 y1 z1 x2 y2 z2 x3 y3 z3 nx ny nz`. `#` starts a comment.
    pub fn read_table<R: BufRead>(reader: R) -> Result<Self, VisionError> {
        let mut markers = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 16 {
                return Err(VisionError::Parse { line: i + 1, msg: format!("expected 16 fields, found {}", fields.len()) });
            }
            let id = fields[0]
                .parse::<u32>()
                .map_err(|e| VisionError::Parse { line: i + 1, msg: format!("bad id: {e}") })?;
            let mut vals = [0.0; 15];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|e| VisionError::Parse { line: i + 1, msg: format!("bad number {f:?}: {e}") })?;
            }
            let p = |k: usize| Vec3::new(vals[3 * k], vals[3 * k + 1], vals[3 * k + 2]);
            markers.push(Marker { id, corners: [p(0), p(1), p(2), p(3)], normal: p(4) });
        }
        Self::new(markers)
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<(), VisionError> {
        writeln!(w, "# id  corner0(xyz) corner1(xyz) corner2(xyz) corner3(xyz) normal(xyz)")?;
        for m in &self.markers {
            write!(w, "{}", m.id)?;
            for c in m.corners.iter().chain(std::iter::once(&m.normal)) {
                write!(w, " {} {} {}", c.x, c.y, c.z)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub marker_id: u32,
    pub corner: u8,
    pub pixel: Pixel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSet {
    pub timestamp: f64,
    pub observations: Vec<CornerObservation>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct markers with at least one observed corner.
    pub fn marker_count(&self) -> usize {
        self.observations.iter().map(|o| o.marker_id).collect::<HashSet<_>>().len()
    }

    /// Append rows `t,marker_id,corner,u,v`.
    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<(), VisionError> {
        for o in &self.observations {
            w.write_record(&[
                self.timestamp.to_string(),
                o.marker_id.to_string(),
                o.corner.to_string(),
                format!("{:.6}", o.pixel.x),
                format!("{:.6}", o.pixel.y),
            ])?;
        }
        Ok(())
    }
}

/// Which frame an estimated pose is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateFrame {
    /// Target-to-camera-optical transform.
    Camera,
    /// Target-to-world transform.
    World,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: PoseSE3,
    pub frame: EstimateFrame,
    pub timestamp: f64,
    pub rms_px: f64,
    pub corners: usize,
    pub converged: bool,
}

impl PoseEstimate {
    /// Re-express a camera-frame estimate in the world frame given the
    /// camera-to-world pose.
    pub fn to_world(&self, world_from_camera: &PoseSE3) -> PoseEstimate {
        match self.frame {
            EstimateFrame::World => *self,
            EstimateFrame::Camera => PoseEstimate {
                pose: world_from_camera.compose(&self.pose),
                frame: EstimateFrame::World,
                ..*self
            },
        }
    }
}

/// Camera-to-world pose for a camera mounted at the chaser's center.
pub fn camera_pose(chaser_position: Vec3, chaser_attitude: Quat) -> PoseSE3 {
    PoseSE3::new((chaser_attitude * camera_from_body().conjugate()).normalized(), chaser_position)
}

/// Pinhole projection of a model point through extrinsics `extr`
/// (model-to-camera). `None` when the point is not in front of the camera.
pub fn project_point(intr: &CameraIntrinsics, extr: &PoseSE3, m: Vec3) -> Option<Pixel> {
    let xc = extr.transform_point(m);
    if !(xc.z > 0.0) {
        return None;
    }
    Some(Pixel::new(intr.fx * xc.x / xc.z + intr.cx, intr.fy * xc.y / xc.z + intr.cy))
}

/// Synthesize the corner detections a camera at `world_from_camera` would
/// report for the target, with i.i.d. Gaussian pixel noise of `sigma_px`.
pub fn observe(
    intr: &CameraIntrinsics,
    world_from_camera: &PoseSE3,
    target: &crate::dynamics::RigidState,
    layout: &MarkerLayout,
    sigma_px: f64,
    seed: u64,
    timestamp: f64,
) -> ObservationSet {
    assert!(sigma_px >= 0.0, "noise sigma must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_px.max(0.0)).expect("finite sigma");
    let world_from_target = PoseSE3::new(target.q, target.p);
    let camera_from_target = world_from_camera.inverse().compose(&world_from_target);
    let cam_pos = world_from_camera.translation;

    let mut observations = Vec::new();
    for marker in &layout.markers {
        let normal_w = crate::spatial::rotate_vector(target.q, marker.normal);
        let center_w = world_from_target.transform_point(marker.center());
        if normal_w.dot(&(center_w - cam_pos)) >= 0.0 {
            continue;
        }
        for (k, &corner) in marker.corners.iter().enumerate() {
            let Some(px) = project_point(intr, &camera_from_target, corner) else {
                continue;
            };
            if !intr.contains(&px) {
                continue;
            }
            let noisy = if sigma_px > 0.0 {
                px + Pixel::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                px
            };
            if intr.contains(&noisy) {
                observations.push(CornerObservation { marker_id: marker.id, corner: k as u8, pixel: noisy });
            }
        }
    }
    ObservationSet { timestamp, observations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RigidState;
    use nalgebra::{Matrix3x4, Vector4};

    fn cam100() -> CameraIntrinsics {
        CameraIntrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0, width: 100, height: 100 }
    }

    #[test]
    fn projection_examples() {
        let c = cam100();
        let id = PoseSE3::IDENTITY;
        assert_eq!(project_point(&c, &id, Vec3::new(0.0, 0.0, 1.0)), Some(Pixel::new(50.0, 50.0)));
        let p = project_point(&c, &id, Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((p - Pixel::new(60.0, 50.0)).norm() < 1e-12);
        assert_eq!(project_point(&c, &id, Vec3::new(0.0, 0.0, -1.0)), None);
    }

    #[test]
    fn projection_matches_homogeneous_matrix_product() {
        let c = CameraIntrinsics::default();
        let a = Matrix3::new(c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0);
        for k in 0..20 {
            let f = k as f64;
            let q = Quat::new(1.0, 0.1 * f.sin(), 0.2 * f.cos(), 0.05 * f).normalized();
            let t = Vec3::new(0.1 * f.cos(), -0.05 * f.sin(), 2.0 + 0.1 * f);
            let extr = PoseSE3::new(q, t);
            let m = Vec3::new(0.3 * (f * 1.3).sin(), 0.2 * (f * 0.7).cos(), 0.1 * f.sin());
            let r = q.to_rotation_matrix();
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            rt.set_column(3, &t);
            let h = a * rt * Vector4::new(m.x, m.y, m.z, 1.0);
            let expected = Pixel::new(h.x / h.z, h.y / h.z);
            let got = project_point(&c, &extr, m).unwrap();
            assert!((got - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn camera_looks_along_body_x() {
        let pose = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        // a point ahead of the chaser on body +X lands on the optical axis
        let cam_from_world = pose.inverse();
        let p = cam_from_world.transform_point(Vec3::new(2.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        // body +Z (up) is image −y
        let up = cam_from_world.transform_point(Vec3::new(2.0, 0.0, 0.1));
        assert!(up.y < 0.0);
    }

    fn target_ahead() -> RigidState {
        // Target 1.5 m ahead; its −x face (marker 1) faces the camera.
        RigidState::at_rest(Vec3::new(1.5, 0.0, 0.0), Quat::IDENTITY)
    }

    #[test]
    fn facing_marker_is_seen_exactly_without_noise() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        let obs = observe(&CameraIntrinsics::default(), &cam, &target_ahead(), &layout, 0.0, 1, 0.0);
        assert_eq!(obs.len(), 4);
        assert!(obs.observations.iter().all(|o| o.marker_id == 1));
        let world_from_target = PoseSE3::new(Quat::IDENTITY, Vec3::new(1.5, 0.0, 0.0));
        let extr = cam.inverse().compose(&world_from_target);
        for o in &obs.observations {
            let exact = project_point(&CameraIntrinsics::default(), &extr, layout.marker(1).unwrap().corners[o.corner as usize]).unwrap();
            assert_eq!(o.pixel, exact);
        }
    }

    #[test]
    fn marker_facing_away_is_culled() {
        let layout = MarkerLayout::new(vec![MarkerLayout::cube(0.3, 0.24).markers[0].clone()]).unwrap();
        let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        let obs = observe(&CameraIntrinsics::default(), &cam, &target_ahead(), &layout, 0.5, 1, 0.0);
        assert!(obs.is_empty());
    }

    #[test]
    fn target_behind_camera_is_not_seen() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let cam = camera_pose(Vec3::zeros(), Quat::from_yaw(std::f64::consts::PI));
        let obs = observe(&CameraIntrinsics::default(), &cam, &target_ahead(), &layout, 0.0, 1, 0.0);
        assert!(obs.is_empty());
    }

    #[test]
    fn observation_is_seed_deterministic() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let mut target = target_ahead();
        target.q = Quat::from_axis_angle(Vec3::new(0.2, 1.0, 0.4), 0.6);
        let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        let c = CameraIntrinsics::default();
        let a = observe(&c, &cam, &target, &layout, 0.5, 42, 1.0);
        let b = observe(&c, &cam, &target, &layout, 0.5, 42, 1.0);
        let d = observe(&c, &cam, &target, &layout, 0.5, 43, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert!(a.observations.iter().all(|o| c.contains(&o.pixel)));
    }

    #[test]
    fn layout_table_round_trip_and_validation() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let mut buf = Vec::new();
        layout.write_table(&mut buf).unwrap();
        let back = MarkerLayout::read_table(&buf[..]).unwrap();
        assert_eq!(back.markers.len(), 6);
        for (a, b) in layout.markers.iter().zip(&back.markers) {
            assert_eq!(a.id, b.id);
            for (x, y) in a.corners.iter().zip(&b.corners) {
                assert!((x - y).norm() < 1e-15);
            }
        }
        let dup = "0 0 0 0 1 0 0 1 1 0 0 1 0 0 0 1\n0 0 0 0 1 0 0 1 1 0 0 1 0 0 0 1\n";
        assert!(matches!(MarkerLayout::read_table(dup.as_bytes()), Err(VisionError::InvalidLayout(_))));
        let collinear = "0 0 0 0 1 0 0 2 0 0 3 0 0 0 0 1\n";
        assert!(MarkerLayout::read_table(collinear.as_bytes()).is_err());
        assert!(matches!(MarkerLayout::read_table("1 2 3".as_bytes()), Err(VisionError::Parse { line: 1, .. })));
    }

    #[test]
    fn cube_layout_normals_point_outward() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        layout.validate().unwrap();
        for m in &layout.markers {
            assert!(m.center().dot(&m.normal) > 0.0);
            let n = (m.corners[1] - m.corners[0]).cross(&(m.corners[3] - m.corners[0]));
            assert!(n.normalize().dot(&m.normal).abs() > 0.999);
        }
    }

    #[test]
    fn intrinsics_validation() {
        CameraIntrinsics::default().validate().unwrap();
        let mut c = CameraIntrinsics::default();
        c.fx = 0.0;
        assert!(c.validate().is_err());
        let mut c = CameraIntrinsics::default();
        c.cx = 700.0;
        assert!(c.validate().is_err());
    }
}
