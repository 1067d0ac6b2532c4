//! Perspective-n-point: linear initialization (DLT for general point sets,
//! plane homography for coplanar ones) refined by Gauss–Newton on the
//! pixel reprojection error.

use super::{CameraIntrinsics, EstimateFrame, MarkerLayout, ObservationSet, Pixel, PoseEstimate};
use crate::spatial::{PoseSE3, Quat, Vec3};
use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector6, SVD};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 corners, got {0}")]
    TooFewCorners(usize),
    #[error("degenerate corner configuration")]
    Degenerate,
}

#[derive(Debug, Clone, Copy)]
pub struct PnpOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self { max_iterations: 50, step_tolerance: 1e-10 }
    }
}

struct Correspondence {
    model: Vec3,
    pixel: Pixel,
    norm: Vector2<f64>,
}

/// Recover the target-to-camera pose from observed marker corners.
pub fn solve_pnp(
    intr: &CameraIntrinsics,
    layout: &MarkerLayout,
    obs: &ObservationSet,
) -> Result<PoseEstimate, PnpError> {
    solve_pnp_with(intr, layout, obs, &PnpOptions::default())
}

pub fn solve_pnp_with(
    intr: &CameraIntrinsics,
    layout: &MarkerLayout,
    obs: &ObservationSet,
    opts: &PnpOptions,
) -> Result<PoseEstimate, PnpError> {
    let pts: Vec<Correspondence> = obs
        .observations
        .iter()
        .filter_map(|o| {
            let m = layout.marker(o.marker_id)?;
            let model = *m.corners.get(o.corner as usize)?;
            Some(Correspondence { model, pixel: o.pixel, norm: intr.normalize(&o.pixel) })
        })
        .collect();
    if pts.len() < 4 {
        return Err(PnpError::TooFewCorners(pts.len()));
    }

    let centroid = pts.iter().map(|c| c.model).sum::<Vec3>() / pts.len() as f64;
    let mut scatter = Matrix3::zeros();
    for c in &pts {
        let d = c.model - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l0, l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l1 > 1e-12 * l0) || l0 <= 0.0 {
        return Err(PnpError::Degenerate);
    }
    let planar = l2 < 1e-10 * l0;

    let init = if planar || pts.len() < 6 {
        let basis = Matrix3::from_columns(&[
            eig.eigenvectors.column(order[0]).into_owned(),
            eig.eigenvectors.column(order[1]).into_owned(),
            eig.eigenvectors.column(order[0]).cross(&eig.eigenvectors.column(order[1])),
        ]);
        homography_init(&pts, centroid, &basis)
    } else {
        dlt_init(&pts, centroid, l0.sqrt() / (pts.len() as f64).sqrt())
    }
    .ok_or(PnpError::Degenerate)?;

    let (pose, converged) = refine(intr, &pts, init, opts);
    let rms = reprojection_rms(intr, &pts, &pose);
    if !rms.is_finite() {
        return Err(PnpError::Degenerate);
    }
    Ok(PoseEstimate {
        pose,
        frame: EstimateFrame::Camera,
        timestamp: obs.timestamp,
        rms_px: rms,
        corners: pts.len(),
        converged,
    })
}

/// Right null vector of `a` (rows padded so the SVD exposes all columns).
fn null_vector(mut a: DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let n = a.ncols();
    if a.nrows() < n {
        a = a.resize_vertically(n, 0.0);
    }
    let svd = SVD::new(a, false, true);
    let vt = svd.v_t?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(vt.row(k).transpose())
}

/// Closest rotation to `m` in the Frobenius sense.
fn orthonormalize(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    Some(r)
}

fn dlt_init(pts: &[Correspondence], centroid: Vec3, scale: f64) -> Option<PoseSE3> {
    let s = if scale > 0.0 { scale } else { 1.0 };
    let mut a = DMatrix::zeros(2 * pts.len(), 12);
    for (i, c) in pts.iter().enumerate() {
        let m = (c.model - centroid) / s;
        let (x, y) = (c.norm.x, c.norm.y);
        let row = [m.x, m.y, m.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = row[k];
            a[(2 * i, 8 + k)] = -x * row[k];
            a[(2 * i + 1, 4 + k)] = row[k];
            a[(2 * i + 1, 8 + k)] = -y * row[k];
        }
    }
    let p = null_vector(a)?;
    let mut b = Matrix3::from_fn(|r, c| p[4 * r + c]);
    let mut t = Vec3::new(p[3], p[7], p[11]);
    if b.determinant() < 0.0 {
        b = -b;
        t = -t;
    }
    let r = orthonormalize(&b)?;
    let sv = b.singular_values();
    let lambda = sv.sum() / 3.0;
    if !(lambda > 0.0) {
        return None;
    }
    // x_c = R (M - c)/s + t/λ  →  scale translation back to model units.
    let t = t / lambda * s - r * centroid;
    Some(PoseSE3::new(Quat::from_rotation_matrix(&r), t))
}

fn homography_init(pts: &[Correspondence], centroid: Vec3, basis: &Matrix3<f64>) -> Option<PoseSE3> {
    let plane: Vec<Vector2<f64>> = pts
        .iter()
        .map(|c| {
            let d = basis.transpose() * (c.model - centroid);
            Vector2::new(d.x, d.y)
        })
        .collect();
    let s = (plane.iter().map(|p| p.norm_squared()).sum::<f64>() / plane.len() as f64).sqrt();
    if !(s > 0.0) {
        return None;
    }
    let mut a = DMatrix::zeros(2 * pts.len(), 9);
    for (i, (c, p)) in pts.iter().zip(&plane).enumerate() {
        let (pa, pb) = (p.x / s, p.y / s);
        let (x, y) = (c.norm.x, c.norm.y);
        let row = [pa, pb, 1.0];
        for k in 0..3 {
            a[(2 * i, k)] = row[k];
            a[(2 * i, 6 + k)] = -x * row[k];
            a[(2 * i + 1, 3 + k)] = row[k];
            a[(2 * i + 1, 6 + k)] = -y * row[k];
        }
    }
    let h = null_vector(a)?;
    let hm = Matrix3::from_fn(|r, c| h[3 * r + c]);
    let (h1, h2, h3) = (hm.column(0).into_owned(), hm.column(1).into_owned(), hm.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    // H ∝ [s·r1, s·r2, t] because plane coordinates were divided by s.
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let rp = orthonormalize(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]))?;
    let t_plane = h3 * (lambda * s);
    let r = rp * basis.transpose();
    let t = t_plane - r * centroid;
    Some(PoseSE3::new(Quat::from_rotation_matrix(&r), t))
}

fn residuals(intr: &CameraIntrinsics, pts: &[Correspondence], r: &Matrix3<f64>, t: &Vec3) -> Option<f64> {
    let mut cost = 0.0;
    for c in pts {
        let xc = r * c.model + t;
        if !(xc.z > 1e-9) {
            return None;
        }
        let u = intr.fx * xc.x / xc.z + intr.cx - c.pixel.x;
        let v = intr.fy * xc.y / xc.z + intr.cy - c.pixel.y;
        cost += u * u + v * v;
    }
    Some(cost)
}

fn refine(intr: &CameraIntrinsics, pts: &[Correspondence], init: PoseSE3, opts: &PnpOptions) -> (PoseSE3, bool) {
    let mut r = init.rotation.to_rotation_matrix();
    let mut t = init.translation;
    let Some(mut cost) = residuals(intr, pts, &r, &t) else {
        return (init, false);
    };
    for _ in 0..opts.max_iterations {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in pts {
            let rm = r * c.model;
            let xc = rm + t;
            let iz = 1.0 / xc.z;
            let res = Vector2::new(
                intr.fx * xc.x * iz + intr.cx - c.pixel.x,
                intr.fy * xc.y * iz + intr.cy - c.pixel.y,
            );
            let dproj = nalgebra::Matrix2x3::new(
                intr.fx * iz,
                0.0,
                -intr.fx * xc.x * iz * iz,
                0.0,
                intr.fy * iz,
                -intr.fy * xc.y * iz * iz,
            );
            // d(exp(δ) R M)/dδ = −[R M]×
            let jr = dproj * (-rm.cross_matrix());
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jr);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
        }
        let Some(step) = jtj.cholesky().map(|ch| -ch.solve(&jtr)) else {
            return (to_pose(&r, &t), false);
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let s = step * alpha;
            let dr = Quat::from_rotation_vector(Vec3::new(s[0], s[1], s[2])).to_rotation_matrix();
            let rn = dr * r;
            let tn = t + Vec3::new(s[3], s[4], s[5]);
            if let Some(c) = residuals(intr, pts, &rn, &tn) {
                if c <= cost {
                    r = orthonormalize(&rn).unwrap_or(rn);
                    t = tn;
                    cost = c;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted || (step * alpha).norm() < opts.step_tolerance {
            // No further decrease is numerically possible: stationary point.
            return (to_pose(&r, &t), true);
        }
    }
    (to_pose(&r, &t), false)
}

fn to_pose(r: &Matrix3<f64>, t: &Vec3) -> PoseSE3 {
    PoseSE3::new(Quat::from_rotation_matrix(r), *t)
}

fn reprojection_rms(intr: &CameraIntrinsics, pts: &[Correspondence], pose: &PoseSE3) -> f64 {
    residuals(intr, pts, &pose.rotation.to_rotation_matrix(), &pose.translation)
        .map(|c| (c / pts.len() as f64).sqrt())
        .unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RigidState;
    use crate::spatial::quat_to_angle;
    use crate::vision::{camera_pose, observe, CornerObservation};

    fn rot_err(a: Quat, b: Quat) -> f64 {
        quat_to_angle((a * b.conjugate()).canonical())
    }

    fn truth(target: &RigidState) -> PoseSE3 {
        camera_pose(Vec3::zeros(), Quat::IDENTITY).inverse().compose(&PoseSE3::new(target.q, target.p))
    }

    #[test]
    fn single_marker_noiseless_round_trip() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let target = RigidState::at_rest(Vec3::new(1.2, 0.1, -0.05), Quat::from_axis_angle(Vec3::new(0.1, 0.3, 1.0), 0.2));
        let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        let obs = observe(&CameraIntrinsics::default(), &cam, &target, &layout, 0.0, 0, 0.0);
        assert_eq!(obs.marker_count(), 1);
        let est = solve_pnp(&CameraIntrinsics::default(), &layout, &obs).unwrap();
        let gt = truth(&target);
        assert!((est.pose.translation - gt.translation).norm() < 1e-6);
        assert!(rot_err(est.pose.rotation, gt.rotation) < 1e-6);
        assert!(est.converged);
        assert_eq!(est.corners, 4);
    }

    #[test]
    fn multi_marker_noiseless_round_trip() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let target = RigidState::at_rest(Vec3::new(1.5, -0.1, 0.1), Quat::from_axis_angle(Vec3::new(0.3, 0.5, 1.0), 0.7));
        let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
        let obs = observe(&CameraIntrinsics::default(), &cam, &target, &layout, 0.0, 0, 0.0);
        assert!(obs.marker_count() >= 2);
        let est = solve_pnp(&CameraIntrinsics::default(), &layout, &obs).unwrap();
        let gt = truth(&target);
        assert!((est.pose.translation - gt.translation).norm() < 1e-6);
        assert!(rot_err(est.pose.rotation, gt.rotation) < 1e-6);
    }

    #[test]
    fn three_corners_is_underdetermined() {
        let layout = MarkerLayout::cube(0.3, 0.24);
        let obs = ObservationSet {
            timestamp: 0.0,
            observations: (0..3)
                .map(|k| CornerObservation { marker_id: 1, corner: k, pixel: Pixel::new(300.0 + k as f64, 200.0) })
                .collect(),
        };
        assert_eq!(solve_pnp(&CameraIntrinsics::default(), &layout, &obs), Err(PnpError::TooFewCorners(3)));
    }

    #[test]
    fn collinear_model_points_are_degenerate() {
        use crate::vision::Marker;
        // two markers whose observed corners all lie on one line
        let line = |x: f64| Vec3::new(x, 0.0, 0.0);
        let markers = vec![
            Marker { id: 0, corners: [line(0.0), line(0.1), Vec3::new(0.1, 0.1, 0.0), Vec3::new(0.0, 0.1, 0.0)], normal: Vec3::z() },
            Marker { id: 1, corners: [line(0.2), line(0.3), Vec3::new(0.3, 0.1, 0.0), Vec3::new(0.2, 0.1, 0.0)], normal: Vec3::z() },
        ];
        let layout = MarkerLayout::new(markers).unwrap();
        let obs = ObservationSet {
            timestamp: 0.0,
            observations: [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|&(id, k)| CornerObservation { marker_id: id, corner: k, pixel: Pixel::new(100.0 + 50.0 * (id * 2 + k as u32) as f64, 200.0) })
                .collect(),
        };
        assert_eq!(solve_pnp(&CameraIntrinsics::default(), &layout, &obs), Err(PnpError::Degenerate));
    }
}
