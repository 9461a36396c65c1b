//! Road layouts: centerline polylines plus a constant half-width.
//!
//! Every layout starts its centerlines at `(-60, 0)` heading `+x`, so the ego
//! at arc length [`ROUTE_START_S`] sits at the origin facing forward.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Point, Polyline};
use crate::error::{Error, Result};

/// Arc length of the origin along every route.
pub const ROUTE_START_S: f64 = 60.0;
const TAIL: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    Straight,
    Curve,
    Fork,
    ExitRamp,
    Roundabout,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 5] = [
        LayoutKind::Straight,
        LayoutKind::Curve,
        LayoutKind::Fork,
        LayoutKind::ExitRamp,
        LayoutKind::Roundabout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutKind::Straight => "straight",
            LayoutKind::Curve => "curve",
            LayoutKind::Fork => "fork",
            LayoutKind::ExitRamp => "exit-ramp",
            LayoutKind::Roundabout => "roundabout",
        }
    }

    /// Layouts whose route bends within the planning horizon.
    pub fn is_curved(&self) -> bool {
        !matches!(self, LayoutKind::Straight)
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LayoutKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown layout kind `{s}`")))
    }
}

/// Drivable region: the closed set of points within `half_width` of any centerline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub kind: LayoutKind,
    pub centerlines: Vec<Polyline>,
    pub half_width: f64,
}

impl RoadLayout {
    /// Distance to the nearest centerline and the index of that centerline.
    pub fn nearest_centerline(&self, p: Point) -> (usize, super::geometry::Projection) {
        let mut best = (0, self.centerlines[0].project(p));
        for (i, c) in self.centerlines.iter().enumerate().skip(1) {
            let pr = c.project(p);
            if pr.distance < best.1.distance {
                best = (i, pr);
            }
        }
        best
    }

    /// Positive inside, negative outside, zero on the boundary.
    pub fn signed_distance(&self, p: Point) -> f64 {
        self.half_width - self.nearest_centerline(p).1.distance
    }

    /// Continuous drivable-area test; the boundary counts as drivable.
    pub fn contains(&self, p: Point) -> bool {
        self.signed_distance(p) >= 0.0
    }

    /// Direction of travel of the nearest centerline at `p` (world frame).
    pub fn road_heading(&self, p: Point) -> f64 {
        self.nearest_centerline(p).1.heading
    }
}

fn straight(from: Point, heading: f64, length: f64, step: f64, out: &mut Vec<Point>) {
    let n = (length / step).ceil().max(1.0) as usize;
    for i in 1..=n {
        let d = length * i as f64 / n as f64;
        out.push([from[0] + d * heading.cos(), from[1] + d * heading.sin()]);
    }
}

/// Appends an arc starting at the last point of `out` with the given
/// heading; `turn > 0` turns left. Returns the final heading.
fn arc(out: &mut Vec<Point>, heading: f64, radius: f64, turn: f64, step: f64) -> f64 {
    let start = *out.last().unwrap();
    let side = turn.signum();
    let center = [
        start[0] - side * radius * heading.sin(),
        start[1] + side * radius * heading.cos(),
    ];
    let start_angle = (start[1] - center[1]).atan2(start[0] - center[0]);
    let n = ((radius * turn.abs()) / step).ceil().max(1.0) as usize;
    for i in 1..=n {
        let a = start_angle + turn * i as f64 / n as f64;
        out.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
    }
    wrap_angle(heading + turn)
}

fn trunk(length_after_origin: f64) -> Vec<Point> {
    let mut pts = vec![[-ROUTE_START_S, 0.0]];
    straight(
        [-ROUTE_START_S, 0.0],
        0.0,
        ROUTE_START_S + length_after_origin,
        10.0,
        &mut pts,
    );
    pts
}

fn finish(mut pts: Vec<Point>, heading: f64) -> Result<Polyline> {
    let last = *pts.last().unwrap();
    straight(last, heading, TAIL, 10.0, &mut pts);
    Polyline::new(pts)
}

/// Generated layout plus the index of the centerline the expert follows.
pub struct GeneratedLayout {
    pub layout: RoadLayout,
    pub route: usize,
}

pub fn generate_layout(kind: LayoutKind, rng: &mut impl Rng) -> Result<GeneratedLayout> {
    let half_width = rng.random_range(4.0..5.0);
    let (centerlines, route) = match kind {
        LayoutKind::Straight => {
            let pts = trunk(1.0);
            (vec![finish(pts, 0.0)?], 0)
        }
        LayoutKind::Curve => {
            let start = rng.random_range(1.0..15.0);
            let radius = rng.random_range(18.0..40.0);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let angle = rng.random_range(60.0f64..120.0).to_radians();
            let mut pts = trunk(start);
            let h = arc(&mut pts, 0.0, radius, side * angle, 1.0);
            (vec![finish(pts, h)?], 0)
        }
        LayoutKind::Fork => {
            let start = rng.random_range(3.0..18.0);
            let mut lines = Vec::new();
            for side in [1.0, -1.0] {
                let radius = rng.random_range(20.0..40.0);
                let angle = rng.random_range(50.0f64..85.0).to_radians();
                let mut pts = trunk(start);
                let h = arc(&mut pts, 0.0, radius, side * angle, 1.0);
                lines.push(finish(pts, h)?);
            }
            let route = rng.random_range(0..2);
            (lines, route)
        }
        LayoutKind::ExitRamp => {
            let start = rng.random_range(3.0..18.0);
            let radius = rng.random_range(35.0..60.0);
            let angle = rng.random_range(35.0f64..55.0).to_radians();
            let main = finish(trunk(start), 0.0)?;
            let mut pts = trunk(start);
            let h = arc(&mut pts, 0.0, radius, -angle, 1.0);
            let ramp = finish(pts, h)?;
            let route = rng.random_range(0..2);
            (vec![main, ramp], route)
        }
        LayoutKind::Roundabout => {
            let radius = rng.random_range(16.0..26.0);
            // approach, three quarters of the ring counter-clockwise, then exit
            let mut pts = trunk(1.0);
            let entry = *pts.last().unwrap();
            let h = arc(&mut pts, 0.0, radius, 1.5 * PI, 1.0);
            let route = finish(pts.clone(), h)?;
            // remaining quarter closes the ring back to the entry
            let mut rest = vec![*pts.last().unwrap()];
            arc(&mut rest, h, radius, 0.5 * PI, 1.0);
            *rest.last_mut().unwrap() = entry;
            (vec![route, Polyline::new(rest)?], 0)
        }
    };
    Ok(GeneratedLayout {
        layout: RoadLayout {
            kind,
            centerlines,
            half_width,
        },
        route,
    })
}
