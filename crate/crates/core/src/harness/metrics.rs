use super::run::RunLog;
use crate::spatial::{quat_error, quat_to_angle};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaserMetrics {
    pub chaser: usize,
    /// Mean of ‖p_ref − p‖² against the unscaled reference (m²).
    pub position_mse: f64,
    /// Mean squared geodesic attitude error (rad²).
    pub orientation_mse: f64,
    pub min_target_distance: f64,
    /// Infinite for a lone chaser.
    pub min_inter_chaser_distance: f64,
    /// Final chaser-to-target-center distance (m).
    pub final_docking_distance: f64,
    /// Final distance to the docking-scaled reference (m).
    pub final_reference_error: f64,
    pub max_position_error: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub chasers: Vec<ChaserMetrics>,
    /// Any chaser exceeded the failure bound.
    pub failed: bool,
}

impl MetricsSummary {
    pub fn mean_position_mse(&self) -> f64 {
        self.chasers.iter().map(|c| c.position_mse).sum::<f64>() / self.chasers.len() as f64
    }

    pub fn mean_orientation_mse(&self) -> f64 {
        self.chasers.iter().map(|c| c.orientation_mse).sum::<f64>() / self.chasers.len() as f64
    }
}

/// Summary statistics of a run; `None` for an empty log.
pub fn compute_metrics(log: &RunLog) -> Option<MetricsSummary> {
    let last = log.ticks.last()?;
    let n = log.chasers;
    let count = log.ticks.len() as f64;
    let mut chasers: Vec<ChaserMetrics> = (0..n)
        .map(|i| ChaserMetrics {
            chaser: i,
            position_mse: 0.0,
            orientation_mse: 0.0,
            min_target_distance: f64::INFINITY,
            min_inter_chaser_distance: f64::INFINITY,
            final_docking_distance: (last.chasers[i].truth.p - last.target.p).norm(),
            final_reference_error: (last.chasers[i].truth.p - last.chasers[i].scaled_reference.0).norm(),
            max_position_error: 0.0,
            failed: false,
        })
        .collect();
    for tick in &log.ticks {
        for (i, m) in chasers.iter_mut().enumerate() {
            let c = &tick.chasers[i];
            let e = (c.reference.0 - c.truth.p).norm();
            let a = quat_to_angle(quat_error(c.truth.q, c.reference.1));
            m.position_mse += e * e / count;
            m.orientation_mse += a * a / count;
            m.max_position_error = m.max_position_error.max(e);
            m.min_target_distance = m.min_target_distance.min((c.truth.p - tick.target.p).norm());
            for (j, other) in tick.chasers.iter().enumerate() {
                if j != i {
                    m.min_inter_chaser_distance = m.min_inter_chaser_distance.min((c.truth.p - other.truth.p).norm());
                }
            }
        }
    }
    for m in &mut chasers {
        m.failed = !(m.max_position_error <= log.failure_bound);
    }
    let failed = chasers.iter().any(|c| c.failed);
    Some(MetricsSummary { chasers, failed })
}
