//! Command-line front end: `run`, `sweep`, `suite`, `verify` and `report`.

use crate::harness::{
    self, collision_avoidance, derive_seed, four_chaser_docking, run_batch, run_to_dir, scenario_suite, single_chaser,
    slider_docking, sweep, sweep_from, two_chaser_tracking, EstimatorMode, GridPoint, HarnessError, RunOutcome,
    ScenarioConfig, TABLE_HEADER,
};
use crate::verify;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "DOCKSWARM_OUT";

pub mod exit {
    pub const OK: u8 = 0;
    /// A run diverged, an oracle failed or a run reported failure.
    pub const FAILED: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_SCENARIO: u8 = 3;
    pub const BAD_SCENARIO: u8 = 4;
    pub const OUTPUT_NOT_WRITABLE: u8 = 5;
    pub const IO: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "dockswarm", version, about = "Vision-based multi-chaser tracking and docking simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario TOML file, or the name of a built-in scenario.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; per-run seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Record per-iteration solver traces (trace.csv).
    #[arg(long, global = true)]
    pub trace: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario.
    Run,
    /// Horizon / timestep / falloff sweep (of --scenario if given).
    Sweep,
    /// Every built-in scenario, including the sweep.
    Suite,
    /// Run the numerical oracle checks.
    Verify,
    /// Rebuild the sweep table from run directories under --out.
    Report,
}

/// Built-in scenarios addressable by name through `--scenario`.
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "baseline" => single_chaser(GridPoint::BASELINE),
        "two_chaser_tracking" => two_chaser_tracking(),
        "four_chaser_docking" => four_chaser_docking(),
        "collision_avoidance" => collision_avoidance(),
        "slider_stationary_ground_truth" => slider_docking(false, EstimatorMode::GroundTruth),
        "slider_stationary_vision" => slider_docking(false, EstimatorMode::Vision),
        "slider_moving_ground_truth" => slider_docking(true, EstimatorMode::GroundTruth),
        "slider_moving_vision" => slider_docking(true, EstimatorMode::Vision),
        _ => return None,
    })
}

pub const BUILTINS: &[&str] = &[
    "baseline",
    "two_chaser_tracking",
    "four_chaser_docking",
    "collision_avoidance",
    "slider_stationary_ground_truth",
    "slider_stationary_vision",
    "slider_moving_ground_truth",
    "slider_moving_vision",
];

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Config(_) => exit::BAD_SCENARIO,
            HarnessError::Diverged { .. } => exit::FAILED,
            _ => exit::IO,
        };
        Failure::new(code, e.to_string())
    }
}

fn load_scenario(source: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(source);
    if path.is_file() {
        return ScenarioConfig::load(path).map_err(|e| match e {
            HarnessError::Io { .. } => Failure::new(exit::MISSING_SCENARIO, format!("cannot read scenario: {e}")),
            other => Failure::new(exit::BAD_SCENARIO, format!("malformed scenario: {other}")),
        });
    }
    builtin(source).ok_or_else(|| {
        Failure::new(
            exit::MISSING_SCENARIO,
            format!("scenario not found: {source} (not a file; built-ins: {})", BUILTINS.join(", ")),
        )
    })
}

fn ensure_writable(dir: &Path) -> Result<(), Failure> {
    let fail = |e: std::io::Error| {
        Failure::new(exit::OUTPUT_NOT_WRITABLE, format!("output directory not writable: {}: {e}", dir.display()))
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(fail)?;
    std::fs::remove_file(&probe).map_err(fail)
}

fn print_outcomes(outcomes: &[RunOutcome]) {
    for o in outcomes {
        match (&o.metrics, &o.error) {
            (_, Some(e)) => println!("{:<40} error: {e}", o.name),
            (Some(m), None) => println!(
                "{:<40} pos_mse={:.4e} ori_mse={:.4e}{}",
                o.name,
                m.mean_position_mse(),
                m.mean_orientation_mse(),
                if m.failed { " FAILED" } else { "" }
            ),
            (None, None) => println!("{:<40} (no ticks)", o.name),
        }
    }
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    let reject_scenario = |cmd: &str| match &cli.scenario {
        Some(_) => Err(Failure::new(exit::USAGE, format!("{cmd} does not take --scenario"))),
        None => Ok(()),
    };
    match cli.command {
        Command::Run => {
            let source = cli
                .scenario
                .as_deref()
                .ok_or_else(|| Failure::new(exit::USAGE, "run requires --scenario <FILE|NAME>"))?;
            let mut cfg = load_scenario(source)?;
            if let Some(master) = cli.seed {
                cfg.seed = derive_seed(master, &cfg.name, &[0]);
            }
            ensure_writable(&cli.out)?;
            let dir = cli.out.join(&cfg.name);
            let (metrics, error) = run_to_dir(&cfg, &dir, cli.trace)?;
            if let Some(e) = error {
                eprintln!("{e}");
                return Ok(exit::FAILED);
            }
            println!("wrote {}", dir.display());
            if let Some(m) = metrics {
                for c in &m.chasers {
                    println!(
                        "chaser {} pos_mse={:.4e} ori_mse={:.4e} min_target_dist={:.3} final_ref_err={:.4} final_dock_dist={:.3}{}",
                        c.chaser,
                        c.position_mse,
                        c.orientation_mse,
                        c.min_target_distance,
                        c.final_reference_error,
                        c.final_docking_distance,
                        if c.failed { " FAILED" } else { "" }
                    );
                }
            }
            Ok(exit::OK)
        }
        Command::Sweep | Command::Suite => {
            let master = cli.seed.unwrap_or(0);
            let runs = match (&cli.command, &cli.scenario) {
                (Command::Sweep, Some(source)) => sweep_from(&load_scenario(source)?, master),
                (Command::Sweep, None) => sweep(master),
                _ => {
                    reject_scenario("suite")?;
                    scenario_suite(master)
                }
            };
            ensure_writable(&cli.out)?;
            let outcomes = run_batch(&runs, &cli.out, cli.jobs, cli.trace)?;
            print_outcomes(&outcomes);
            println!("wrote {}", cli.out.display());
            Ok(exit::OK)
        }
        Command::Verify => {
            reject_scenario("verify")?;
            let reports = verify::run_all();
            for r in &reports {
                println!("{r}");
            }
            Ok(if reports.iter().all(|r| r.passed) { exit::OK } else { exit::FAILED })
        }
        Command::Report => {
            reject_scenario("report")?;
            let rows = harness::report(&cli.out)?;
            println!("{}", TABLE_HEADER.join(","));
            for r in rows {
                println!("{}", r.record().join(","));
            }
            Ok(exit::OK)
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
