//! Map planar wrench requests onto the eight on/off thrusters: minimum
//! effort when attainable, closest attainable wrench otherwise, then PWM.
//!
//!     cargo run --release --example thruster_allocation

use dockswarm::allocation::{allocate, to_pwm, PlanarWrench, ThrusterLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = ThrusterLayout::slider();
    let requests = [
        PlanarWrench::new(0.3, 0.0, 0.0),
        PlanarWrench::new(0.2, -0.4, 0.05),
        PlanarWrench::new(0.0, 0.0, -0.15),
        PlanarWrench::new(5.0, 0.0, 0.0),
    ];
    for w in requests {
        let a = allocate(&w, &layout)?;
        let pwm = to_pwm(&a.thrusts, &layout, 0.1, 0.01);
        println!("request  {:?}", w.as_slice());
        println!("  thrusts  {:.3?}", a.thrusts);
        println!("  achieved {:.3?} saturated={}", a.achieved.as_slice(), a.saturated);
        println!("  duty     {:.2?}", pwm.duty);
    }
    Ok(())
}
