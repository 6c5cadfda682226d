//! Scene context: map, agent histories and the target agent.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Frame, Point2, PolygonSet, Pose2, Trajectory};
use crate::math;
use crate::physics::AgentKinematics;

/// Timestamps closer than this are considered equal.
const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentType {
    Vehicle,
    Pedestrian,
}

impl AgentType {
    /// Box extents (length, width) used when a dataset publishes none.
    pub fn imputed_extent(self) -> (f64, f64) {
        match self {
            AgentType::Vehicle => (4.5, 2.0),
            AgentType::Pedestrian => (0.6, 0.6),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "vehicle" => Some(AgentType::Vehicle),
            "pedestrian" => Some(AgentType::Pedestrian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub t: f64,
    pub pose: Pose2,
    pub speed: f64,
    pub accel: f64,
    pub yaw_rate: f64,
    pub length: Option<f64>,
    pub width: Option<f64>,
}

impl AgentState {
    pub fn extent(&self, kind: AgentType) -> (f64, f64) {
        let (l, w) = kind.imputed_extent();
        (self.length.unwrap_or(l), self.width.unwrap_or(w))
    }

    pub fn kinematics(&self) -> AgentKinematics {
        AgentKinematics { pose: self.pose, speed: self.speed.max(0.0), accel: self.accel, yaw_rate: self.yaw_rate }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    pub kind: AgentType,
    /// Oldest first.
    pub history: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadMap {
    pub drivable: PolygonSet,
    pub lanes: Vec<Vec<Point2>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub map: RoadMap,
    pub agents: Vec<Agent>,
    pub target_id: u64,
    pub t_now: f64,
    pub history_window: f64,
    pub prediction_horizon: f64,
    pub freq: f64,
}

impl SceneContext {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::InvalidArgument("scene frequency must be positive"));
        }
        if !(self.prediction_horizon > 0.0 && self.history_window > 0.0) {
            return Err(Error::InvalidArgument("scene horizons must be positive"));
        }
        let target = self.target()?;
        if target.history.is_empty() {
            return Err(Error::Empty("target history"));
        }
        let last = target.history.last().unwrap();
        if math::abs(last.t - self.t_now) > TIME_TOLERANCE {
            return Err(Error::InvalidArgument("target history must end at t_now"));
        }
        let dt = 1.0 / self.freq;
        for agent in &self.agents {
            for s in &agent.history {
                if s.t > self.t_now + TIME_TOLERANCE {
                    return Err(Error::InvalidArgument("history state after t_now"));
                }
                if !(s.pose.is_finite() && s.speed.is_finite() && s.accel.is_finite() && s.yaw_rate.is_finite()) {
                    return Err(Error::NonFinite("agent state"));
                }
            }
            for w in agent.history.windows(2) {
                if math::abs(w[1].t - w[0].t - dt) > TIME_TOLERANCE {
                    return Err(Error::InvalidArgument("history timestamps must be spaced at 1/freq"));
                }
            }
        }
        Ok(())
    }

    pub fn target(&self) -> Result<&Agent> {
        self.agents
            .iter()
            .find(|a| a.id == self.target_id)
            .ok_or(Error::MissingTarget(self.target_id))
    }

    pub fn target_state(&self) -> Result<&AgentState> {
        self.target()?.history.last().ok_or(Error::Empty("target history"))
    }

    /// Pose of the target at `t_now`; defines the agent frame.
    pub fn target_pose(&self) -> Result<Pose2> {
        Ok(self.target_state()?.pose)
    }

    pub fn target_kinematics(&self) -> Result<AgentKinematics> {
        Ok(self.target_state()?.kinematics())
    }

    /// Number of future waypoints, `round(horizon · freq)`.
    pub fn future_len(&self) -> usize {
        math::round(self.prediction_horizon * self.freq) as usize
    }
}

/// A scene plus (optionally) the target's recorded future in the global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub context: SceneContext,
    pub future: Option<Trajectory>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        if let Some(f) = &self.future {
            if f.frame() != Frame::Global {
                return Err(Error::FrameMismatch { expected: Frame::Global, found: f.frame() });
            }
            if f.len() != self.context.future_len() {
                return Err(Error::LengthMismatch { expected: self.context.future_len(), found: f.len() });
            }
        }
        Ok(())
    }

    /// Recorded future expressed in the target's agent frame.
    pub fn future_in_agent_frame(&self) -> Result<Option<Trajectory>> {
        let pose = self.context.target_pose()?;
        self.future
            .as_ref()
            .map(|f| crate::geometry::transform_to_frame(f, &pose, crate::geometry::Direction::ToAgent))
            .transpose()
    }
}
