//! Estimation combiner: fuses the chasers' world-frame target-pose
//! estimates into one target odometry with a moving-average filter and
//! outlier rejection.

use crate::dynamics::RigidState;
use crate::spatial::{quat_error, quat_to_angle, PoseSE3, Quat, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerConfig {
    /// Moving-average window length in samples.
    pub window: usize,
    /// Per-chaser estimates older than this (s) are ignored.
    pub staleness: f64,
    pub position_threshold: f64,
    pub angle_threshold: f64,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self { window: 10, staleness: 0.5, position_threshold: 0.25, angle_threshold: 0.5 }
    }
}

impl CombinerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window < 1 {
            return Err("combiner window must be at least 1".into());
        }
        if !(self.staleness > 0.0 && self.position_threshold > 0.0 && self.angle_threshold > 0.0) {
            return Err("combiner staleness and thresholds must be positive".into());
        }
        Ok(())
    }
}

/// A chaser's target-pose estimate already expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldEstimate {
    pub chaser: usize,
    pub pose: PoseSE3,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPose {
    pub pose: PoseSE3,
    pub timestamp: f64,
    pub contributors: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Health {
    Ok,
    /// No fresh estimate this tick; the last fused value is held.
    Degraded,
    /// Nothing has ever been fused.
    NoEstimate,
}

impl Health {
    pub fn as_str(&self) -> &'static str {
        match self {
            Health::Ok => "ok",
            Health::Degraded => "degraded",
            Health::NoEstimate => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOdometry {
    pub state: RigidState,
    /// Time the filtered pose refers to (window-mean time).
    pub timestamp: f64,
    pub contributors: Vec<usize>,
    pub health: Health,
}

/// Sign-aligned normalized component average. Signs are aligned against
/// `reference`, or the first quaternion when none is given.
pub fn chordal_mean<'a>(quats: impl IntoIterator<Item = &'a Quat>, reference: Option<Quat>) -> Option<Quat> {
    let mut iter = quats.into_iter().peekable();
    let anchor = reference.or_else(|| iter.peek().map(|q| **q))?;
    let mut acc = Quat::new(0.0, 0.0, 0.0, 0.0);
    for q in iter {
        let q = if q.dot(&anchor) < 0.0 { -*q } else { *q };
        acc = acc.add(&q);
    }
    let n = acc.norm();
    (n > 0.0).then(|| acc.scale(1.0 / n))
}

/// Average the latest non-stale estimate of every chaser.
pub fn fuse(estimates: &[WorldEstimate], now: f64, staleness: f64) -> Option<FusedPose> {
    let mut fresh: Vec<&WorldEstimate> =
        estimates.iter().filter(|e| now - e.timestamp <= staleness + 1e-12).collect();
    if fresh.is_empty() {
        return None;
    }
    fresh.sort_by_key(|e| e.chaser);
    let k = fresh.len() as f64;
    let position = fresh.iter().map(|e| e.pose.translation).sum::<Vec3>() / k;
    let rotation = chordal_mean(fresh.iter().map(|e| &e.pose.rotation), None)?;
    let timestamp = fresh.iter().map(|e| e.timestamp).sum::<f64>() / k;
    Some(FusedPose {
        pose: PoseSE3::new(rotation, position),
        timestamp,
        contributors: fresh.iter().map(|e| e.chaser).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Accepted,
    Rejected,
    /// Too many consecutive rejections: the window was cleared and the
    /// sample accepted as a fresh start.
    Reset,
}

/// Moving-average pose filter with outlier rejection.
#[derive(Debug, Clone)]
pub struct PoseFilter {
    cfg: CombinerConfig,
    window: VecDeque<(f64, PoseSE3)>,
    rejections: usize,
}

impl PoseFilter {
    pub fn new(cfg: CombinerConfig) -> Self {
        Self { cfg, window: VecDeque::with_capacity(cfg.window), rejections: 0 }
    }

    pub fn samples(&self) -> impl Iterator<Item = &(f64, PoseSE3)> {
        self.window.iter()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn push(&mut self, t: f64, pose: PoseSE3) -> FilterOutcome {
        if let Some((_, mean)) = self.mean() {
            let dp = (pose.translation - mean.translation).norm();
            let da = quat_to_angle(quat_error(pose.rotation, mean.rotation));
            if dp > self.cfg.position_threshold || da > self.cfg.angle_threshold {
                self.rejections += 1;
                if self.rejections <= self.cfg.window {
                    return FilterOutcome::Rejected;
                }
                self.window.clear();
                self.rejections = 0;
                self.window.push_back((t, pose));
                return FilterOutcome::Reset;
            }
        }
        self.rejections = 0;
        if self.window.len() == self.cfg.window {
            self.window.pop_front();
        }
        self.window.push_back((t, pose));
        FilterOutcome::Accepted
    }

    /// Window-mean time and pose.
    pub fn mean(&self) -> Option<(f64, PoseSE3)> {
        let n = self.window.len();
        if n == 0 {
            return None;
        }
        let t = self.window.iter().map(|s| s.0).sum::<f64>() / n as f64;
        let p = self.window.iter().map(|s| s.1.translation).sum::<Vec3>() / n as f64;
        let q = chordal_mean(self.window.iter().map(|s| &s.1.rotation), None)?;
        Some((t, PoseSE3::new(q, p)))
    }
}

/// Linear and body-frame angular velocity from the two ends of a pose
/// stream. `None` with fewer than two samples or zero elapsed time.
pub fn estimate_velocities(samples: &[(f64, PoseSE3)]) -> Option<(Vec3, Vec3)> {
    let (first, last) = (samples.first()?, samples.last()?);
    let dt = last.0 - first.0;
    if samples.len() < 2 || !(dt > 0.0) {
        return None;
    }
    let v = (last.1.translation - first.1.translation) / dt;
    let rel = (first.1.rotation.conjugate() * last.1.rotation).normalized();
    let w = rel.to_rotation_vector() / dt;
    Some((v, w))
}

/// Sequential combiner state machine: one per target.
#[derive(Debug, Clone)]
pub struct EstimationCombiner {
    cfg: CombinerConfig,
    latest: BTreeMap<usize, WorldEstimate>,
    filter: PoseFilter,
    velocities: VecDeque<(Vec3, Vec3)>,
    last: Option<TargetOdometry>,
    last_fused_time: f64,
}

impl EstimationCombiner {
    pub fn new(cfg: CombinerConfig) -> Self {
        Self {
            cfg,
            latest: BTreeMap::new(),
            filter: PoseFilter::new(cfg),
            velocities: VecDeque::with_capacity(cfg.window),
            last: None,
            last_fused_time: f64::NEG_INFINITY,
        }
    }

    pub fn config(&self) -> &CombinerConfig {
        &self.cfg
    }

    /// Record a chaser's newest estimate, replacing its previous one.
    pub fn submit(&mut self, est: WorldEstimate) {
        match self.latest.get(&est.chaser) {
            Some(prev) if prev.timestamp > est.timestamp => {}
            _ => {
                self.latest.insert(est.chaser, est);
            }
        }
    }

    /// Fuse, filter and differentiate at time `now`.
    pub fn update(&mut self, now: f64) -> TargetOdometry {
        let estimates: Vec<WorldEstimate> = self.latest.values().copied().collect();
        let fused = fuse(&estimates, now, self.cfg.staleness).filter(|f| f.timestamp > self.last_fused_time);
        let Some(fused) = fused else {
            return self.hold();
        };
        self.last_fused_time = fused.timestamp;
        let mut pose = fused.pose;
        if let Some(prev) = &self.last {
            if pose.rotation.dot(&prev.state.q) < 0.0 {
                pose.rotation = -pose.rotation;
            }
        }
        match self.filter.push(fused.timestamp, pose) {
            FilterOutcome::Rejected => return self.hold(),
            FilterOutcome::Reset => self.velocities.clear(),
            FilterOutcome::Accepted => {}
        }
        // Differencing starts once the window is full so the first velocity
        // spans the whole window rather than two noisy neighbours.
        let samples: Vec<(f64, PoseSE3)> = self.filter.samples().copied().collect();
        let warm = samples.len() >= self.cfg.window.max(2);
        if let Some(vw) = estimate_velocities(&samples).filter(|_| warm) {
            if self.velocities.len() == self.cfg.window {
                self.velocities.pop_front();
            }
            self.velocities.push_back(vw);
        }
        let (v, w) = if self.velocities.is_empty() {
            self.last.as_ref().map(|o| (o.state.v, o.state.w)).unwrap_or_default()
        } else {
            let n = self.velocities.len() as f64;
            let v = self.velocities.iter().map(|x| x.0).sum::<Vec3>() / n;
            let w = self.velocities.iter().map(|x| x.1).sum::<Vec3>() / n;
            (v, w)
        };
        let (t_mean, mean) = self.filter.mean().expect("filter holds an accepted sample");
        let odom = TargetOdometry {
            state: RigidState { p: mean.translation, q: mean.rotation, v, w },
            timestamp: t_mean,
            contributors: fused.contributors,
            health: Health::Ok,
        };
        self.last = Some(odom.clone());
        odom
    }

    fn hold(&self) -> TargetOdometry {
        match &self.last {
            Some(o) => TargetOdometry { contributors: Vec::new(), health: Health::Degraded, ..o.clone() },
            None => TargetOdometry {
                state: RigidState::default(),
                timestamp: 0.0,
                contributors: Vec::new(),
                health: Health::NoEstimate,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64, q: Quat) -> PoseSE3 {
        PoseSE3::new(q, Vec3::new(x, 0.0, 0.0))
    }

    fn est(chaser: usize, p: PoseSE3, t: f64) -> WorldEstimate {
        WorldEstimate { chaser, pose: p, timestamp: t }
    }

    #[test]
    fn fuse_examples() {
        let q = Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.4);
        let a = est(0, pose(0.3, q), 1.0);
        assert_eq!(fuse(&[a], 1.0, 0.5).unwrap().pose, a.pose);

        let f = fuse(&[a, est(1, a.pose, 1.0)], 1.0, 0.5).unwrap();
        assert!((f.pose.translation - a.pose.translation).norm() < 1e-15);
        assert!((f.pose.rotation.dot(&q) - 1.0).abs() < 1e-15);

        let f = fuse(&[est(0, pose(0.0, q), 1.0), est(1, pose(1.0, q), 1.0)], 1.0, 0.5).unwrap();
        assert_eq!(f.pose.translation, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(f.contributors, vec![0, 1]);
    }

    #[test]
    fn stale_estimates_are_excluded() {
        let q = Quat::IDENTITY;
        let f = fuse(&[est(0, pose(0.0, q), 0.0), est(1, pose(1.0, q), 1.0)], 1.0, 0.5).unwrap();
        assert_eq!(f.contributors, vec![1]);
        assert!(fuse(&[est(0, pose(0.0, q), 0.0)], 1.0, 0.5).is_none());
    }

    #[test]
    fn antipodal_inputs_fuse_like_aligned_ones() {
        let q = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 1.0), 0.9);
        let r = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 1.2), 0.95);
        let aligned = fuse(&[est(0, pose(0.0, q), 0.0), est(1, pose(0.0, r), 0.0)], 0.0, 1.0).unwrap();
        let flipped = fuse(&[est(0, pose(0.0, q), 0.0), est(1, pose(0.0, -r), 0.0)], 0.0, 1.0).unwrap();
        assert!((aligned.pose.rotation.dot(&flipped.pose.rotation).abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn filter_examples() {
        let cfg = CombinerConfig { window: 4, position_threshold: 10.0, ..Default::default() };
        let mut f = PoseFilter::new(cfg);
        for k in 0..4 {
            f.push(k as f64, pose(k as f64, Quat::IDENTITY));
        }
        assert_eq!(f.mean().unwrap().1.translation.x, 1.5);

        let mut f = PoseFilter::new(CombinerConfig { position_threshold: 0.05, ..Default::default() });
        let mut out = Vec::new();
        for k in 0..20 {
            let x = if k == 10 { 1.0 } else { 0.0 };
            let r = f.push(k as f64, pose(x, Quat::IDENTITY));
            if k == 10 {
                assert_eq!(r, FilterOutcome::Rejected);
            }
            out.push(f.mean().unwrap().1.translation.x);
        }
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn filter_recovers_from_genuine_jump() {
        let cfg = CombinerConfig { window: 3, position_threshold: 0.05, ..Default::default() };
        let mut f = PoseFilter::new(cfg);
        for k in 0..3 {
            f.push(k as f64, pose(0.0, Quat::IDENTITY));
        }
        let outcomes: Vec<_> = (3..7).map(|k| f.push(k as f64, pose(2.0, Quat::IDENTITY))).collect();
        assert_eq!(outcomes[..3], [FilterOutcome::Rejected; 3]);
        assert_eq!(outcomes[3], FilterOutcome::Reset);
        assert_eq!(f.mean().unwrap().1.translation.x, 2.0);
    }

    #[test]
    fn velocity_examples() {
        let still: Vec<_> = (0..5).map(|k| (k as f64, pose(1.0, Quat::IDENTITY))).collect();
        let (v, w) = estimate_velocities(&still).unwrap();
        assert_eq!((v, w), (Vec3::zeros(), Vec3::zeros()));

        let moving: Vec<_> = (0..5).map(|k| (k as f64, pose(0.015 * k as f64, Quat::IDENTITY))).collect();
        let (v, _) = estimate_velocities(&moving).unwrap();
        assert!((v - Vec3::new(0.015, 0.0, 0.0)).norm() < 1e-15);

        // closed-form spin: q(t) = exp(½ ω t ẑ)
        let spin: Vec<_> = (0..10)
            .map(|k| {
                let t = 0.1 * k as f64;
                (t, pose(0.0, Quat::from_axis_angle(Vec3::z(), 0.03 * t)))
            })
            .collect();
        let (_, w) = estimate_velocities(&spin).unwrap();
        assert!((w - Vec3::new(0.0, 0.0, 0.03)).norm() < 1e-3);

        assert!(estimate_velocities(&still[..1]).is_none());
        assert!(estimate_velocities(&[(1.0, pose(0.0, Quat::IDENTITY)), (1.0, pose(1.0, Quat::IDENTITY))]).is_none());
    }

    #[test]
    fn combiner_tracks_constant_velocity_target() {
        let mut c = EstimationCombiner::new(CombinerConfig::default());
        let v = Vec3::new(0.015, 0.0075, 0.03);
        let mut odom = None;
        for k in 0..40 {
            let t = 0.1 * k as f64;
            c.submit(est(0, PoseSE3::new(Quat::IDENTITY, v * t), t));
            odom = Some(c.update(t));
        }
        let o = odom.unwrap();
        assert_eq!(o.health, Health::Ok);
        assert!((o.state.v - v).norm() < 1e-12);
        // window-mean time refers to the window-mean position
        assert!((o.state.p - v * o.timestamp).norm() < 1e-12);
    }

    #[test]
    fn combiner_holds_when_all_estimates_stale() {
        let mut c = EstimationCombiner::new(CombinerConfig::default());
        assert_eq!(c.update(0.0).health, Health::NoEstimate);
        c.submit(est(0, pose(1.0, Quat::IDENTITY), 0.0));
        let a = c.update(0.0);
        assert_eq!(a.health, Health::Ok);
        let b = c.update(2.0);
        assert_eq!(b.health, Health::Degraded);
        assert_eq!(b.state, a.state);
        assert!(b.contributors.is_empty());
    }

    fn unit_quat() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64)
            .prop_map(|(x, y, z, w)| Quat::new(w, x, y, z).normalized())
    }

    proptest! {
        #[test]
        fn fusing_copies_is_exact(q in unit_quat(), x in -5.0..5.0f64, k in 1usize..6) {
            let e: Vec<_> = (0..k).map(|i| est(i, pose(x, q), 0.0)).collect();
            let f = fuse(&e, 0.0, 1.0).unwrap();
            prop_assert!((f.pose.translation - e[0].pose.translation).norm() <= 1e-15 * (1.0 + x.abs()));
            prop_assert!((f.pose.rotation.dot(&q) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn fusion_is_order_invariant(qs in proptest::collection::vec(unit_quat(), 2..5), xs in proptest::collection::vec(-3.0..3.0f64, 5)) {
            let e: Vec<_> = qs.iter().enumerate().map(|(i, q)| est(i, pose(xs[i], *q), 0.0)).collect();
            let mut r = e.clone();
            r.reverse();
            let a = fuse(&e, 0.0, 1.0).unwrap();
            let b = fuse(&r, 0.0, 1.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
