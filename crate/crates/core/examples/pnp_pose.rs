//! Project a cube's ArUco-style markers into a camera with pixel noise and
//! recover the target pose with PnP.
//!
//!     cargo run --release --example pnp_pose

use dockswarm::dynamics::RigidState;
use dockswarm::spatial::{quat_error, quat_to_angle, Quat, Vec3};
use dockswarm::vision::{camera_pose, observe, solve_pnp, CameraIntrinsics, MarkerLayout};

fn main() {
    let intr = CameraIntrinsics::default();
    let layout = MarkerLayout::cube(0.3, 0.24);
    // Chaser at the origin looking along +X at a tilted target 1.5 m away.
    let cam = camera_pose(Vec3::zeros(), Quat::IDENTITY);
    let target = RigidState::at_rest(Vec3::new(1.5, 0.1, -0.05), Quat::from_axis_angle(Vec3::new(0.3, 1.0, 0.2).normalize(), 0.5));
    for sigma in [0.0, 0.5, 1.0, 2.0] {
        let obs = observe(&intr, &cam, &target, &layout, sigma, 7, 0.0);
        match solve_pnp(&intr, &layout, &obs) {
            Ok(est) => {
                let w = est.to_world(&cam);
                println!(
                    "sigma={sigma:.1}px markers={} corners={:2}  pos_err={:.2e} m  rot_err={:.2e} rad  rms={:.2} px",
                    obs.marker_count(),
                    est.corners,
                    (w.pose.translation - target.p).norm(),
                    quat_to_angle(quat_error(w.pose.rotation, target.q)),
                    est.rms_px
                );
            }
            Err(e) => println!("sigma={sigma:.1}px: {e}"),
        }
    }
}
