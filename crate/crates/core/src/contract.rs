//! Two-level planning contract: a high-level policy maps the scene to goal
//! guidance, a low-level policy maps the scene and guidance to a trajectory.

use crate::diffusion::{Plan, PlanInput, Planner};
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::scene::{BevGrid, Point};
use crate::uncertainty::{Guidance, Refiner, RefinerInput};

/// What both policies observe on one frame, in the ego frame.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub frame: usize,
    pub grid: &'a BevGrid,
    /// Pooled BEV tokens.
    pub tokens: &'a Tensor,
    pub agents: &'a Tensor,
    pub motion: [f64; 4],
    pub command: [f64; 4],
    /// Goal chosen by the scorer, when it ran.
    pub raw_goal: Option<Point>,
}

pub trait HighLevelPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn guidance(&self, obs: &Observation<'_>) -> Result<Guidance>;
}

pub trait LowLevelPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn requires_guidance(&self) -> bool;
    fn plan(&self, obs: &Observation<'_>, guidance: Option<&Guidance>) -> Result<Plan>;
}

fn raw_goal(obs: &Observation<'_>) -> Result<Point> {
    obs.raw_goal
        .ok_or_else(|| Error::invalid("high-level policy needs the scorer's raw goal"))
}

/// Passes the raw goal through with a constant scale.
#[derive(Clone, Debug)]
pub struct RawGoalPolicy {
    pub b: [f64; 2],
}

impl HighLevelPolicy for RawGoalPolicy {
    fn name(&self) -> &str {
        "raw-goal"
    }

    fn guidance(&self, obs: &Observation<'_>) -> Result<Guidance> {
        Guidance::new(raw_goal(obs)?, self.b)
    }
}

/// Refines the raw goal with a trained refiner.
#[derive(Clone, Copy, Debug)]
pub struct RefinerPolicy<'a> {
    pub refiner: &'a Refiner,
}

impl HighLevelPolicy for RefinerPolicy<'_> {
    fn name(&self) -> &str {
        "refiner"
    }

    fn guidance(&self, obs: &Observation<'_>) -> Result<Guidance> {
        let input = RefinerInput::new(
            obs.grid,
            obs.tokens.clone(),
            obs.agents.clone(),
            raw_goal(obs)?,
            obs.motion,
            obs.command,
        )?;
        self.refiner.refine(&input)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiffusionPolicy<'a> {
    pub planner: &'a Planner,
}

impl LowLevelPolicy for DiffusionPolicy<'_> {
    fn name(&self) -> &str {
        "diffusion"
    }

    fn requires_guidance(&self) -> bool {
        self.planner.config.guided
    }

    fn plan(&self, obs: &Observation<'_>, guidance: Option<&Guidance>) -> Result<Plan> {
        let input = PlanInput::new(&self.planner.anchors, obs.grid, obs.motion, obs.command, guidance)?;
        self.planner.plan(&input)
    }
}

/// A high/low pair checked for compatibility.
#[derive(Clone, Copy)]
pub struct ComposedPlanner<'a> {
    high: Option<&'a dyn HighLevelPolicy>,
    low: &'a dyn LowLevelPolicy,
}

/// Pairs a high-level policy (or none) with a low-level one; a guided
/// low-level policy needs a high-level source and vice versa.
pub fn compose<'a>(
    high: Option<&'a dyn HighLevelPolicy>,
    low: &'a dyn LowLevelPolicy,
) -> Result<ComposedPlanner<'a>> {
    match (high.is_some(), low.requires_guidance()) {
        (true, false) => Err(Error::invalid(format!(
            "low-level policy '{}' takes no guidance",
            low.name()
        ))),
        (false, true) => Err(Error::invalid(format!(
            "low-level policy '{}' needs a high-level policy",
            low.name()
        ))),
        _ => Ok(ComposedPlanner { high, low }),
    }
}

impl<'a> ComposedPlanner<'a> {
    pub fn high(&self) -> Option<&'a dyn HighLevelPolicy> {
        self.high
    }

    pub fn low(&self) -> &'a dyn LowLevelPolicy {
        self.low
    }

    pub fn is_guided(&self) -> bool {
        self.high.is_some()
    }

    /// Runs both levels on a fresh frame.
    pub fn plan(&self, obs: &Observation<'_>) -> Result<(Option<Guidance>, Plan)> {
        let g = self.high.map(|h| h.guidance(obs)).transpose()?;
        let plan = self.low.plan(obs, g.as_ref())?;
        Ok((g, plan))
    }
}
