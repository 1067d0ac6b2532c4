//! Scenario files: a versioned TOML schema describing one closed-loop run.

use super::HarnessError;
use crate::allocation::ThrusterLayout;
use crate::dynamics::{InertialParams, RigidState};
use crate::estimation::CombinerConfig;
use crate::nmpc::{DockingSchedule, FormationOffset, NmpcConfig};
use crate::spatial::Vec3;
use crate::vision::{CameraIntrinsics, MarkerLayout};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Free-flying 6-DoF chasers.
    #[default]
    Orbital,
    /// Air-bearing table: x/y translation and yaw only, thrusters + PWM.
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Target odometry from marker observations, PnP and the combiner.
    #[default]
    Vision,
    /// Target odometry is the true target state.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutSpec {
    Cube { cube_side: f64, marker_side: f64 },
    PlanarBox { side: f64, marker_side: f64 },
    /// Marker table file, relative paths resolved against the scenario file.
    File { path: PathBuf },
}

impl LayoutSpec {
    pub fn build(&self, base: Option<&Path>) -> Result<MarkerLayout, HarnessError> {
        let layout = match self {
            LayoutSpec::Cube { cube_side, marker_side } => MarkerLayout::cube(*cube_side, *marker_side),
            LayoutSpec::PlanarBox { side, marker_side } => MarkerLayout::planar_box(*side, *marker_side),
            LayoutSpec::File { path } => {
                let p = resolve(base, path);
                let f = std::fs::File::open(&p).map_err(|e| HarnessError::Io { path: p.clone(), source: e })?;
                MarkerLayout::read_table(std::io::BufReader::new(f))
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
        };
        layout.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub initial: RigidState,
    pub layout: LayoutSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    /// Corner detection noise, pixels (1σ).
    #[serde(default = "one_px")]
    pub pixel_noise: f64,
}

fn one_px() -> f64 {
    1.0
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { intrinsics: CameraIntrinsics::default(), pixel_noise: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaserSpec {
    pub initial: RigidState,
    pub offset: FormationOffset,
    #[serde(default)]
    pub camera: CameraSpec,
}

/// Replace a chaser's formation offset from `time` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceChange {
    pub time: f64,
    pub chaser: usize,
    pub offset: FormationOffset,
}

/// Set the target's linear (world) and angular (body) velocity at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetChange {
    pub time: f64,
    pub v: Vec3,
    pub w: Vec3,
}

/// External force (world frame) and torque (body frame) on one chaser over
/// `[time, time + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time: f64,
    pub duration: f64,
    pub chaser: usize,
    #[serde(default)]
    pub force: Vec3,
    #[serde(default)]
    pub torque: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSchedule {
    #[serde(default)]
    pub docking: DockingSchedule,
    #[serde(default)]
    pub reference_changes: Vec<ReferenceChange>,
    #[serde(default)]
    pub target_changes: Vec<TargetChange>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThrusterSpec {
    Slider,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarSpec {
    pub thrusters: ThrusterSpec,
    /// PWM period (s).
    pub pwm_period: f64,
    /// Minimum valve on-time (s).
    pub min_on_time: f64,
    /// Constant world-frame acceleration (table slope, tube drag).
    #[serde(default)]
    pub disturbance_accel: Vec3,
}

impl Default for PlanarSpec {
    fn default() -> Self {
        Self { thrusters: ThrusterSpec::Slider, pwm_period: 0.1, min_on_time: 0.01, disturbance_accel: Vec3::zeros() }
    }
}

impl PlanarSpec {
    pub fn build(&self, base: Option<&Path>) -> Result<ThrusterLayout, HarnessError> {
        let layout = match &self.thrusters {
            ThrusterSpec::Slider => ThrusterLayout::slider(),
            ThrusterSpec::File { path } => {
                let p = resolve(base, path);
                let f = std::fs::File::open(&p).map_err(|e| HarnessError::Io { path: p.clone(), source: e })?;
                ThrusterLayout::read_table(std::io::BufReader::new(f))
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
        };
        layout.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub estimator: EstimatorMode,
    /// Simulated time (s).
    pub duration: f64,
    /// Control rate (Hz); defaults to `1 / nmpc.dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_rate: Option<f64>,
    /// Truth-propagation substep (s).
    #[serde(default = "default_substep")]
    pub physics_substep: f64,
    #[serde(default)]
    pub seed: u64,
    /// Position error (m) beyond which a run counts as failed.
    #[serde(default = "default_failure_bound")]
    pub failure_bound: f64,
    pub target: TargetSpec,
    pub chasers: Vec<ChaserSpec>,
    #[serde(default)]
    pub model: InertialParams,
    #[serde(default)]
    pub events: EventSchedule,
    #[serde(default)]
    pub nmpc: NmpcConfig,
    #[serde(default)]
    pub combiner: CombinerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar: Option<PlanarSpec>,
    /// Directory used to resolve relative file references.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_substep() -> f64 {
    1e-3
}

fn default_failure_bound() -> f64 {
    5.0
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl ScenarioConfig {
    pub fn control_period(&self) -> f64 {
        match self.control_rate {
            Some(r) => 1.0 / r,
            None => self.nmpc.dt,
        }
    }

    /// Number of control ticks.
    pub fn ticks(&self) -> usize {
        (self.duration / self.control_period()).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.version != SCHEMA_VERSION {
            return bad(format!("unsupported scenario version {} (expected {SCHEMA_VERSION})", self.version));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be finite and non-negative".into());
        }
        if let Some(r) = self.control_rate {
            if !(r > 0.0 && r.is_finite()) {
                return bad("control rate must be positive".into());
            }
        }
        let period = self.control_period();
        if !(self.physics_substep > 0.0) || self.physics_substep > period + 1e-12 {
            return bad(format!("physics substep must be in (0, {period}]"));
        }
        if !(self.failure_bound > 0.0) {
            return bad("failure bound must be positive".into());
        }
        if self.chasers.is_empty() {
            return bad("at least one chaser is required".into());
        }
        self.nmpc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.combiner.validate().map_err(HarnessError::Config)?;
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.events.docking.validate().map_err(HarnessError::Config)?;
        for (i, c) in self.chasers.iter().enumerate() {
            c.camera.intrinsics.validate().map_err(|e| HarnessError::Config(format!("chaser {i}: {e}")))?;
            if !(c.camera.pixel_noise >= 0.0) {
                return bad(format!("chaser {i}: pixel noise must be non-negative"));
            }
            if !c.initial.is_finite() {
                return bad(format!("chaser {i}: initial state must be finite"));
            }
        }
        if !self.target.initial.is_finite() {
            return bad("target initial state must be finite".into());
        }
        let n = self.chasers.len();
        let in_range = |t: f64| (0.0..=self.duration).contains(&t);
        let ev = &self.events;
        let dock_ok = ev.docking.events.iter().all(|e| in_range(e.time) && e.chasers.iter().all(|&c| c < n));
        let refs_ok = ev.reference_changes.iter().all(|r| in_range(r.time) && r.chaser < n);
        let tgt_ok = ev.target_changes.iter().all(|r| in_range(r.time));
        let dist_ok = ev.disturbances.iter().all(|d| in_range(d.time) && d.chaser < n && d.duration >= 0.0);
        if !(dock_ok && refs_ok && tgt_ok && dist_ok) {
            return bad("event times must lie within the duration and chaser ids must exist".into());
        }
        if self.mode == Mode::Planar {
            let p = self.planar.clone().unwrap_or_default();
            if !(p.pwm_period > 0.0 && p.min_on_time >= 0.0 && p.min_on_time <= p.pwm_period) {
                return bad("PWM period must be positive and the minimum on-time within it".into());
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| match e {
                HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_toml()).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
    }
}
