//! Single chaser tracking a tumbling target with vision-based estimation
//! (T = 3 s, dt = 0.1 s, α = 0). Writes the run's CSV logs.
//!
//!     cargo run --release --example closed_loop_baseline -- [out_dir]

use dockswarm::harness::{run, single_chaser, write_run, GridPoint};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/examples/baseline".into()));
    let cfg = single_chaser(GridPoint::BASELINE);
    let log = run(&cfg)?;
    let metrics = write_run(&log, &out)?.expect("non-empty run");
    let c = &metrics.chasers[0];
    println!("{} ticks, logs in {}", log.ticks.len(), out.display());
    println!("position MSE    {:.3e} m^2", c.position_mse);
    println!("orientation MSE {:.3e} rad^2", c.orientation_mse);
    println!("failed          {}", c.failed);
    Ok(())
}
