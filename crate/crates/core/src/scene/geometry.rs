//! Planar geometry: polylines, poses and oriented boxes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closest point of segment `ab` to `p`: `(t, foot, squared distance)`.
pub(crate) fn foot_on_segment(a: Point, b: Point, p: Point) -> (f64, Point, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    let foot = [a[0] + t * dx, a[1] + t * dy];
    let d2 = (p[0] - foot[0]).powi(2) + (p[1] - foot[1]).powi(2);
    (t, foot, d2)
}

/// Rigid 2D pose: position plus heading (rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn to_world(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn rotate_to_local(&self, v: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    pub fn rotate_to_world(&self, v: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Composes a pose given in this frame into the parent frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        let p = self.to_world([local.x, local.y]);
        Pose::new(p[0], p[1], wrap_angle(self.heading + local.heading))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Projection {
    /// Unsigned distance from the query to the polyline.
    pub distance: f64,
    /// Arc length of the foot point.
    pub s: f64,
    pub foot: Point,
    pub heading: f64,
    /// Signed lateral offset (positive to the left of travel direction).
    pub lateral: f64,
}

/// Directed polyline with at least two distinct consecutive vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polyline {
    points: Vec<Point>,
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<Point>> for Polyline {
    type Error = Error;
    fn try_from(points: Vec<Point>) -> Result<Self> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Point> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("polyline needs at least 2 vertices"));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::invalid("polyline has repeated consecutive vertices"));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position and heading at arc length `s`; extrapolates linearly past the ends.
    pub fn point_at(&self, s: f64) -> (Point, f64) {
        let n = self.points.len();
        let seg = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = (s - self.cumulative[seg]) / len;
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], heading)
    }

    /// Closest point on the polyline. Ties resolve to the earliest segment.
    pub fn project(&self, p: Point) -> Projection {
        self.project_in_range(p, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Like [`Polyline::project`] but only over segments overlapping the
    /// arc-length window `[s_lo, s_hi]`, which disambiguates self-crossings.
    pub fn project_in_range(&self, p: Point, s_lo: f64, s_hi: f64) -> Projection {
        let mut best = Projection {
            distance: f64::INFINITY,
            s: 0.0,
            foot: self.points[0],
            heading: 0.0,
            lateral: 0.0,
        };
        let mut best_d2 = f64::INFINITY;
        for (i, w) in self.points.windows(2).enumerate() {
            if self.cumulative[i + 1] < s_lo || self.cumulative[i] > s_hi {
                continue;
            }
            let (a, b) = (w[0], w[1]);
            // cheap bounding-box lower bound
            let bx = (a[0].min(b[0]) - p[0]).max(p[0] - a[0].max(b[0])).max(0.0);
            let by = (a[1].min(b[1]) - p[1]).max(p[1] - a[1].max(b[1])).max(0.0);
            if bx * bx + by * by >= best_d2 {
                continue;
            }
            let (t, foot, d2) = foot_on_segment(a, b, p);
            if d2 < best_d2 {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len2 = dx * dx + dy * dy;
                best_d2 = d2;
                let len = len2.sqrt();
                let cross = dx * (p[1] - a[1]) - dy * (p[0] - a[0]);
                best = Projection {
                    distance: d2.sqrt(),
                    s: self.cumulative[i] + t * len,
                    foot,
                    heading: dy.atan2(dx),
                    lateral: cross / len,
                };
            }
        }
        if best_d2.is_infinite() && (s_lo > f64::NEG_INFINITY || s_hi < f64::INFINITY) {
            return self.project(p);
        }
        best
    }

    /// Unsigned distance from `p` to the polyline.
    pub fn distance(&self, p: Point) -> f64 {
        self.project(p).distance
    }
}

/// Oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Point,
    pub heading: f64,
    /// Half length along the heading, half width across it.
    pub half_extent: [f64; 2],
}

impl OrientedBox {
    pub fn new(center: Point, heading: f64, half_extent: [f64; 2]) -> Self {
        Self {
            center,
            heading,
            half_extent,
        }
    }

    fn axes(&self) -> [Point; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn contains(&self, p: Point) -> bool {
        let [ax, ay] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let u = d[0] * ax[0] + d[1] * ax[1];
        let v = d[0] * ay[0] + d[1] * ay[1];
        u.abs() <= self.half_extent[0] && v.abs() <= self.half_extent[1]
    }

    fn radius_on(&self, axis: Point) -> f64 {
        let [ax, ay] = self.axes();
        self.half_extent[0] * (ax[0] * axis[0] + ax[1] * axis[1]).abs()
            + self.half_extent[1] * (ay[0] * axis[0] + ay[1] * axis[1]).abs()
    }

    /// Separating-axis overlap test (touching counts as overlap).
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let d = [
            other.center[0] - self.center[0],
            other.center[1] - self.center[1],
        ];
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let sep = (d[0] * axis[0] + d[1] * axis[1]).abs();
            if sep > self.radius_on(axis) + other.radius_on(axis) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-9);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pose_round_trip() {
        let pose = Pose::new(3.0, -2.0, 0.7);
        let p = [1.5, 4.0];
        let back = pose.to_local(pose.to_world(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn polyline_rejects_degenerate() {
        assert!(Polyline::new(vec![[0.0, 0.0]]).is_err());
        assert!(Polyline::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn projection_lateral_sign() {
        let pl = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0]]).unwrap();
        let pr = pl.project([4.0, 2.0]);
        assert!((pr.distance - 2.0).abs() < 1e-12);
        assert!((pr.s - 4.0).abs() < 1e-12);
        assert!(pr.lateral > 0.0);
        assert!(pl.project([4.0, -2.0]).lateral < 0.0);
    }

    #[test]
    fn boxes_overlap_and_separate() {
        let a = OrientedBox::new([0.0, 0.0], 0.0, [2.0, 1.0]);
        let b = OrientedBox::new([3.5, 0.0], 0.3, [2.0, 1.0]);
        let c = OrientedBox::new([0.0, 5.0], 0.0, [2.0, 1.0]);
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
        assert!(a.contains([1.9, 0.9]));
        assert!(!a.contains([2.1, 0.0]));
    }
}
