//! Kinematic extrapolation baselines and the physics oracle.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{mean_l2_points, Frame, Point2, Pose2, Trajectory};
use crate::math;

/// Forward-Euler substeps per output step.
pub const SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentKinematics {
    pub pose: Pose2,
    /// m/s, never negative.
    pub speed: f64,
    pub accel: f64,
    pub yaw_rate: f64,
}

impl AgentKinematics {
    pub fn new(pose: Pose2, speed: f64, accel: f64, yaw_rate: f64) -> Result<Self> {
        let k = AgentKinematics { pose, speed, accel, yaw_rate };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        if !(self.pose.is_finite() && self.speed.is_finite() && self.accel.is_finite() && self.yaw_rate.is_finite()) {
            return Err(Error::NonFinite("agent kinematics"));
        }
        if self.speed < 0.0 {
            return Err(Error::InvalidArgument("speed must be non-negative"));
        }
        Ok(())
    }
}

/// The four constant-input motion models, in oracle tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionModel {
    /// constant velocity and yaw
    CvCy,
    /// constant velocity and yaw rate
    CvCyr,
    /// constant acceleration and yaw
    CaCy,
    /// constant acceleration and yaw rate
    CaCyr,
}

impl MotionModel {
    pub const ALL: [MotionModel; 4] = [MotionModel::CvCy, MotionModel::CvCyr, MotionModel::CaCy, MotionModel::CaCyr];

    pub fn uses_accel(self) -> bool {
        matches!(self, MotionModel::CaCy | MotionModel::CaCyr)
    }

    pub fn uses_yaw_rate(self) -> bool {
        matches!(self, MotionModel::CvCyr | MotionModel::CaCyr)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionModel::CvCy => "cv_cy",
            MotionModel::CvCyr => "cv_cyr",
            MotionModel::CaCy => "ca_cy",
            MotionModel::CaCyr => "ca_cyr",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        MotionModel::ALL.into_iter().find(|m| m.name() == name)
    }
}

fn step_count(horizon: f64, freq: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite() && freq > 0.0 && freq.is_finite()) {
        return Err(Error::InvalidArgument("horizon and frequency must be positive"));
    }
    let n = math::round(horizon * freq);
    if n < 1.0 {
        return Err(Error::InvalidArgument("horizon shorter than one sample"));
    }
    Ok(n as usize)
}

/// Integrated states at each output step (excluding the initial state).
///
/// Positions advance with the current speed and heading, then heading and
/// speed are updated; speed is clamped at zero so deceleration never reverses.
pub fn rollout_states(kin: &AgentKinematics, model: MotionModel, horizon: f64, freq: f64) -> Result<Vec<AgentKinematics>> {
    kin.validate()?;
    let steps = step_count(horizon, freq)?;
    let accel = if model.uses_accel() { kin.accel } else { 0.0 };
    let yaw_rate = if model.uses_yaw_rate() { kin.yaw_rate } else { 0.0 };
    let h = 1.0 / freq / SUBSTEPS as f64;
    let (mut x, mut y, mut yaw, mut v) = (kin.pose.x, kin.pose.y, kin.pose.yaw, kin.speed);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        for _ in 0..SUBSTEPS {
            x += v * math::cos(yaw) * h;
            y += v * math::sin(yaw) * h;
            yaw += yaw_rate * h;
            v = (v + accel * h).max(0.0);
        }
        out.push(AgentKinematics { pose: Pose2::new(x, y, yaw), speed: v, accel, yaw_rate });
    }
    Ok(out)
}

/// Global-frame trajectory with `round(horizon·freq)` points at `dt = 1/freq`.
pub fn rollout(kin: &AgentKinematics, model: MotionModel, horizon: f64, freq: f64) -> Result<Trajectory> {
    let states = rollout_states(kin, model, horizon, freq)?;
    let points = states.iter().map(|s| s.pose.position()).collect();
    Trajectory::new(points, 1.0 / freq, Frame::Global)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub best_model: MotionModel,
    pub ade: f64,
}

/// Minimum mean displacement over the four models; ties keep the earlier model.
pub fn physics_oracle(kin: &AgentKinematics, ground_truth: &Trajectory, horizon: f64, freq: f64) -> Result<OracleResult> {
    if ground_truth.frame() != Frame::Global {
        return Err(Error::FrameMismatch { expected: Frame::Global, found: ground_truth.frame() });
    }
    let mut best: Option<OracleResult> = None;
    for model in MotionModel::ALL {
        let traj = rollout(kin, model, horizon, freq)?;
        if traj.len() != ground_truth.len() {
            return Err(Error::LengthMismatch { expected: traj.len(), found: ground_truth.len() });
        }
        let ade = mean_l2_points(traj.points(), ground_truth.points());
        if best.is_none_or(|b| ade < b.ade) {
            best = Some(OracleResult { best_model: model, ade });
        }
    }
    Ok(best.expect("four models evaluated"))
}

/// Convenience: all four rollouts in oracle order.
pub fn all_rollouts(kin: &AgentKinematics, horizon: f64, freq: f64) -> Result<Vec<(MotionModel, Trajectory)>> {
    MotionModel::ALL
        .into_iter()
        .map(|m| rollout(kin, m, horizon, freq).map(|t| (m, t)))
        .collect()
}

/// Closed-form helper used in tests and generators: point at arc length `s`
/// along a circle of curvature `kappa` starting at the origin heading +x.
pub fn arc_point(s: f64, kappa: f64) -> Point2 {
    if kappa == 0.0 {
        return Point2::new(s, 0.0);
    }
    let r = 1.0 / kappa;
    Point2::new(r * math::sin(s * kappa), r * (1.0 - math::cos(s * kappa)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn kin(yaw: f64, speed: f64, accel: f64, yaw_rate: f64) -> AgentKinematics {
        AgentKinematics::new(Pose2::new(0.0, 0.0, yaw), speed, accel, yaw_rate).unwrap()
    }

    #[test]
    fn uniform_motion() {
        let t = rollout(&kin(0.0, 2.0, 0.0, 0.0), MotionModel::CvCy, 3.0, 2.0).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.dt(), 0.5);
        for (i, p) in t.points().iter().enumerate() {
            assert!(p.distance(Point2::new((i + 1) as f64, 0.0)) < 1e-12);
        }
    }

    #[test]
    fn heading_up_moves_along_y() {
        let t = rollout(&kin(PI / 2.0, 2.0, 0.0, 0.0), MotionModel::CvCy, 3.0, 2.0).unwrap();
        for (i, p) in t.points().iter().enumerate() {
            assert!(p.distance(Point2::new(0.0, (i + 1) as f64)) < 1e-12);
        }
    }

    fn circumcenter(a: Point2, b: Point2, c: Point2) -> Point2 {
        let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
        let (a2, b2, c2) = (a.dot(a), b.dot(b), c.dot(c));
        Point2::new(
            (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
            (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
        )
    }

    #[test]
    fn constant_yaw_rate_traces_a_circle() {
        let (v, w) = (5.0, 0.2);
        let t = rollout(&kin(0.0, v, 0.0, w), MotionModel::CvCyr, 6.0, 2.0).unwrap();
        let p = t.points();
        let center = circumcenter(p[0], p[5], p[11]);
        for q in p {
            assert!((q.distance(center) - v / w).abs() < 1e-3, "{}", q.distance(center));
        }
        // the closed-form arc stays within the Euler drift of the rollout
        for (i, q) in p.iter().enumerate() {
            let exact = arc_point(v * (i + 1) as f64 * 0.5, w / v);
            assert!(q.distance(exact) < 0.2);
        }
    }

    #[test]
    fn deceleration_never_reverses() {
        let states = rollout_states(&kin(0.0, 2.0, -3.0, 0.0), MotionModel::CaCy, 3.0, 2.0).unwrap();
        assert!(states.iter().all(|s| s.speed >= 0.0));
        let xs: Vec<f64> = states.iter().map(|s| s.pose.x).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(states.last().unwrap().speed, 0.0);
    }

    #[test]
    fn model_input_independence() {
        let a = rollout(&kin(0.3, 4.0, 1.5, 0.0), MotionModel::CvCy, 3.0, 2.0).unwrap();
        let b = rollout(&kin(0.3, 4.0, 0.0, 0.0), MotionModel::CvCy, 3.0, 2.0).unwrap();
        assert_eq!(a, b);
        let a = rollout(&kin(0.3, 4.0, 1.5, 0.2), MotionModel::CaCy, 3.0, 2.0).unwrap();
        let b = rollout(&kin(0.3, 4.0, 1.5, 0.0), MotionModel::CaCy, 3.0, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_contract() {
        assert!(rollout(&kin(0.0, 1.0, 0.0, 0.0), MotionModel::CvCy, 0.0, 2.0).is_err());
        assert!(rollout(&kin(0.0, 1.0, 0.0, 0.0), MotionModel::CvCy, 3.0, 0.0).is_err());
        let bad = AgentKinematics { pose: Pose2::default(), speed: f64::NAN, accel: 0.0, yaw_rate: 0.0 };
        assert_eq!(rollout(&bad, MotionModel::CvCy, 3.0, 2.0), Err(Error::NonFinite("agent kinematics")));
        assert!(AgentKinematics::new(Pose2::default(), -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn oracle_recovers_generating_model() {
        let k = kin(0.4, 6.0, 0.0, 0.0);
        let gt = rollout(&k, MotionModel::CvCy, 3.0, 2.0).unwrap();
        let r = physics_oracle(&k, &gt, 3.0, 2.0).unwrap();
        assert_eq!(r.best_model, MotionModel::CvCy);
        assert!(r.ade <= 1e-9);

        let k = kin(-1.0, 6.0, 0.8, -0.15);
        let gt = rollout(&k, MotionModel::CaCyr, 3.0, 2.0).unwrap();
        let r = physics_oracle(&k, &gt, 3.0, 2.0).unwrap();
        assert_eq!(r.best_model, MotionModel::CaCyr);
        assert!(r.ade <= 1e-3);
    }

    #[test]
    fn oracle_is_min_over_models() {
        let k = kin(0.0, 3.0, 1.0, 0.3);
        // ground truth heading straight down -y, orthogonal to the motion
        let pts = (1..=6).map(|i| Point2::new(0.0, -(i as f64))).collect();
        let gt = Trajectory::new(pts, 0.5, Frame::Global).unwrap();
        let per_model: Vec<f64> = MotionModel::ALL
            .iter()
            .map(|&m| {
                let t = rollout(&k, m, 3.0, 2.0).unwrap();
                crate::geometry::mean_l2(&t, &gt).unwrap()
            })
            .collect();
        let r = physics_oracle(&k, &gt, 3.0, 2.0).unwrap();
        let min = per_model.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.ade, min);
        assert!(per_model.iter().all(|&a| r.ade <= a));
        let short = Trajectory::new(vec![Point2::new(0.0, 0.0)], 0.5, Frame::Global).unwrap();
        assert!(physics_oracle(&k, &short, 3.0, 2.0).is_err());
    }
}
