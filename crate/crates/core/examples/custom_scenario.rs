//! Load a scenario TOML (or start from the baseline), tweak it in code and
//! sweep a few horizons in parallel.
//!
//!     cargo run --release --example custom_scenario -- [scenario.toml]

use dockswarm::harness::{at_grid_point, run_batch, single_chaser, GridPoint, ScenarioConfig, SuiteRun};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut base = match std::env::args().nth(1) {
        Some(path) => ScenarioConfig::load(path.as_ref())?,
        None => single_chaser(GridPoint::BASELINE),
    };
    base.name = "custom".into();
    base.duration = 30.0;
    base.chasers[0].camera.pixel_noise = 0.5;
    let runs: Vec<SuiteRun> = [1.0, 2.0, 3.0]
        .into_iter()
        .map(|horizon| {
            let grid = GridPoint { horizon, ..GridPoint::BASELINE };
            SuiteRun { group: "custom".into(), rep: 0, grid: Some(grid), scenario: at_grid_point(&base, grid) }
        })
        .collect();
    let outcomes = run_batch(&runs, "out/examples/custom".as_ref(), 0, false)?;
    for o in outcomes {
        let m = o.metrics.expect("non-empty run");
        println!("{:<28} position MSE {:.3e}", o.name, m.mean_position_mse());
    }
    Ok(())
}
