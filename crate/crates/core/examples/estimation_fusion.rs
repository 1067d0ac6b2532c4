//! Two chasers observe a drifting, spinning target; their PnP estimates are
//! fused into one odometry (moving average, outlier gate, velocities).
//!
//!     cargo run --release --example estimation_fusion

use dockswarm::dynamics::{propagate_target, RigidState};
use dockswarm::estimation::{CombinerConfig, EstimationCombiner, WorldEstimate};
use dockswarm::spatial::{quat_error, quat_to_angle, Quat, Vec3};
use dockswarm::vision::{camera_pose, observe, solve_pnp, CameraIntrinsics, MarkerLayout};

fn main() {
    let intr = CameraIntrinsics::default();
    let layout = MarkerLayout::cube(0.3, 0.24);
    let mut target = RigidState {
        v: Vec3::new(0.01, 0.005, 0.0),
        w: Vec3::new(0.0, 0.02, 0.05),
        ..RigidState::default()
    };
    // Chaser 0 on -X looking +X, chaser 1 on -Y looking +Y.
    let cams = [
        camera_pose(Vec3::new(-1.5, 0.0, 0.0), Quat::IDENTITY),
        camera_pose(Vec3::new(0.0, -1.5, 0.0), Quat::from_yaw(std::f64::consts::FRAC_PI_2)),
    ];
    let mut combiner = EstimationCombiner::new(CombinerConfig::default());
    let dt = 0.1;
    for k in 0..60u64 {
        let t = k as f64 * dt;
        for (i, cam) in cams.iter().enumerate() {
            let obs = observe(&intr, cam, &target, &layout, 1.0, k * 2 + i as u64, t);
            if let Ok(est) = solve_pnp(&intr, &layout, &obs) {
                combiner.submit(WorldEstimate { chaser: i, pose: est.to_world(cam).pose, timestamp: t });
            }
        }
        let odo = combiner.update(t);
        if k % 10 == 9 {
            let s = propagate_target(&odo.state, t - odo.timestamp, 1e-3);
            println!(
                "t={t:4.1} {:<8} from {:?}  pos_err={:.4} m  rot_err={:.4} rad  v={:.4?}",
                odo.health.as_str(),
                odo.contributors,
                (s.p - target.p).norm(),
                quat_to_angle(quat_error(s.q, target.q)),
                s.v.as_slice()
            );
        }
        target = propagate_target(&target, dt, 1e-3);
    }
}
