//! Run the numerical oracle checks (same as `dockswarm verify`).
//!
//!     cargo run --release --example oracles

fn main() -> std::process::ExitCode {
    let reports = dockswarm::verify::run_all();
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.passed) {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
