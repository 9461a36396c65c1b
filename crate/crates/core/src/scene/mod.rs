//! Synthetic driving world: road layouts, replayed agents, expert ego plans
//! and the bird's-eye-view raster consumed by the learned modules.

mod agents;
pub mod bev;
mod geometry;
mod layout;
mod scenario;
mod trajectory;

pub use agents::{Agent, AgentMotion, AgentSource, AgentState, FrameAgents, EGO_HALF_EXTENT};
pub use bev::{agent_features, rasterize_bev, rasterize_bev_at, BevGrid, GridConfig, Sample};
pub use geometry::{dist, wrap_angle, OrientedBox, Point, Polyline, Pose, Projection};
pub use layout::{generate_layout, GeneratedLayout, LayoutKind, RoadLayout, ROUTE_START_S};
pub use scenario::{
    generate_scenario, generate_scenario_with, Command, EgoInfo, EgoState, ExpertPlan, Scenario,
    ScenarioConfig, DEFAULT_FRAMES, HISTORY_LEN, SCHEMA_VERSION,
};
pub use trajectory::{Trajectory, DT, HORIZON};
