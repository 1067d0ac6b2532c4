//! Four chasers in formation around a tumbling target; chasers 0 and 3
//! start docking at 60 s, shrinking their offsets to a third.
//!
//!     cargo run --release --example multi_chaser_docking -- [out_dir]

use dockswarm::harness::{four_chaser_docking, run, write_run};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/examples/four_chaser_docking".into()));
    let cfg = four_chaser_docking();
    let log = run(&cfg)?;
    let m = write_run(&log, &out)?.expect("non-empty run");
    println!("chaser  final_ref_err  dist_to_target  min_inter_chaser");
    for c in &m.chasers {
        println!(
            "{:>6}  {:>13.4}  {:>14.3}  {:>16.3}",
            c.chaser, c.final_reference_error, c.final_docking_distance, c.min_inter_chaser_distance
        );
    }
    Ok(())
}
