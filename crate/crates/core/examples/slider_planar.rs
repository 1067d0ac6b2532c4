//! Planar air-bearing chaser docking to 20 cm from a target that drifts
//! for the first 10 s, with thrust allocation and PWM in the loop.
//!
//!     cargo run --release --example slider_planar -- [vision|ground_truth]

use dockswarm::harness::{run, slider_docking, EstimatorMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let estimator = match std::env::args().nth(1).as_deref() {
        Some("ground_truth") => EstimatorMode::GroundTruth,
        _ => EstimatorMode::Vision,
    };
    let log = run(&slider_docking(true, estimator))?;
    for t in log.ticks.iter().step_by(50) {
        let c = &t.chasers[0];
        let pwm = &t.pwm[0];
        println!(
            "t={:5.1}  dist={:.3}  s_dock={:.2}  duty={:?}  saturated={}",
            t.time,
            (c.truth.p - t.target.p).norm(),
            c.s_dock,
            pwm.duty.iter().map(|d| (d * 100.0).round() / 100.0).collect::<Vec<_>>(),
            pwm.saturated
        );
    }
    let last = log.ticks.last().expect("non-empty run");
    println!("final docking distance: {:.3} m", (last.chasers[0].truth.p - last.target.p).norm());
    Ok(())
}
