//! Chaser 0 is sent to the far side of a stationary target and has to go
//! around it (d_min = 0.35 m); chaser 1 keeps observing, so the fused
//! estimate survives while chaser 0 looks away.
//!
//!     cargo run --release --example collision_avoidance

use dockswarm::harness::{collision_avoidance, run, FLIP_TIME};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let log = run(&collision_avoidance())?;
    let mut min_dist = f64::INFINITY;
    let mut blind = Vec::new();
    for t in &log.ticks {
        let c0 = &t.chasers[0];
        min_dist = min_dist.min((c0.truth.p - t.target.p).norm());
        if !c0.sighted && t.time > FLIP_TIME {
            blind.push((t.time, t.contributors.clone()));
        }
    }
    println!("min chaser-0 to target distance: {min_dist:.3} m");
    if let (Some(first), Some(last)) = (blind.first(), blind.last()) {
        println!("chaser 0 blind from {:.1} s to {:.1} s ({} ticks)", first.0, last.0, blind.len());
        let mut sets: Vec<Vec<usize>> = blind.iter().map(|b| b.1.clone()).collect();
        sets.dedup();
        println!("estimate contributors while blind: {sets:?}");
    }
    let last = log.ticks.last().expect("non-empty run");
    let c0 = &last.chasers[0];
    println!("final reference error: {:.3} m", (c0.reference.0 - c0.truth.p).norm());
    Ok(())
}
