use serde::{Deserialize, Serialize};

use super::geometry::{OrientedBox, Point, Pose};
use super::layout::RoadLayout;

/// Ego footprint half extents (length, width).
pub const EGO_HALF_EXTENT: [f64; 2] = [2.25, 1.0];

/// Replayed, non-reactive motion of another road user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "motion", rename_all = "kebab-case")]
pub enum AgentMotion {
    /// Follows a layout centerline at constant signed speed and lateral offset.
    Path {
        centerline: usize,
        lateral: f64,
        s0: f64,
        speed: f64,
    },
    /// Straight-line motion from a fixed start.
    Constant {
        position: Point,
        velocity: Point,
        heading: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub half_extent: [f64; 2],
    #[serde(flatten)]
    pub motion: AgentMotion,
}

/// Snapshot of an agent: box plus instantaneous velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub center: Point,
    pub heading: f64,
    pub velocity: Point,
    pub half_extent: [f64; 2],
}

impl AgentState {
    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.center, self.heading, self.half_extent)
    }

    /// Constant-velocity extrapolation by `dt` seconds.
    pub fn advanced(&self, dt: f64) -> AgentState {
        AgentState {
            center: [
                self.center[0] + self.velocity[0] * dt,
                self.center[1] + self.velocity[1] * dt,
            ],
            ..*self
        }
    }

    pub fn to_local(&self, pose: &Pose) -> AgentState {
        AgentState {
            center: pose.to_local(self.center),
            heading: self.heading - pose.heading,
            velocity: pose.rotate_to_local(self.velocity),
            half_extent: self.half_extent,
        }
    }
}

impl Agent {
    pub fn state_at(&self, layout: &RoadLayout, t: f64) -> AgentState {
        match &self.motion {
            AgentMotion::Path {
                centerline,
                lateral,
                s0,
                speed,
            } => {
                let line = &layout.centerlines[*centerline];
                let (p, h) = line.point_at(s0 + speed * t);
                let (sin, cos) = h.sin_cos();
                AgentState {
                    center: [p[0] - lateral * sin, p[1] + lateral * cos],
                    heading: if *speed < 0.0 { h + std::f64::consts::PI } else { h },
                    velocity: [speed * cos, speed * sin],
                    half_extent: self.half_extent,
                }
            }
            AgentMotion::Constant {
                position,
                velocity,
                heading,
            } => AgentState {
                center: [position[0] + velocity[0] * t, position[1] + velocity[1] * t],
                heading: *heading,
                velocity: *velocity,
                half_extent: self.half_extent,
            },
        }
    }
}

/// Anything that can report agent boxes at a time offset, in the frame the
/// evaluated trajectory is expressed in.
pub trait AgentSource {
    fn agents_at(&self, t: f64) -> Vec<AgentState>;
}

/// A fixed set of agents extrapolated at constant velocity.
impl AgentSource for [AgentState] {
    fn agents_at(&self, t: f64) -> Vec<AgentState> {
        self.iter().map(|a| a.advanced(t)).collect()
    }
}

impl AgentSource for Vec<AgentState> {
    fn agents_at(&self, t: f64) -> Vec<AgentState> {
        self.as_slice().agents_at(t)
    }
}

/// Scenario agents viewed from an ego pose at absolute time `t0`.
pub struct FrameAgents<'a> {
    pub agents: &'a [Agent],
    pub layout: &'a RoadLayout,
    pub pose: Pose,
    pub t0: f64,
}

impl AgentSource for FrameAgents<'_> {
    fn agents_at(&self, t: f64) -> Vec<AgentState> {
        self.agents
            .iter()
            .map(|a| a.state_at(self.layout, self.t0 + t).to_local(&self.pose))
            .collect()
    }
}
