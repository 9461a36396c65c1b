use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Point, Pose};
use crate::error::{Error, Result};

/// Waypoint spacing in seconds.
pub const DT: f64 = 0.5;
/// Default number of waypoints (4-second horizon).
pub const HORIZON: usize = 8;

/// Future waypoints `(x, y, heading)` at `DT` spacing, expressed in the frame
/// of the pose the trajectory was planned from. Waypoint `i` is at time
/// `(i + 1) * DT`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct Trajectory {
    points: Vec<[f64; 3]>,
}

impl TryFrom<Vec<[f64; 3]>> for Trajectory {
    type Error = Error;
    fn try_from(points: Vec<[f64; 3]>) -> Result<Self> {
        Trajectory::new(points)
    }
}

impl From<Trajectory> for Vec<[f64; 3]> {
    fn from(t: Trajectory) -> Self {
        t.points
    }
}

impl Trajectory {
    pub fn new(mut points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("trajectory needs at least one waypoint"));
        }
        for p in &mut points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("trajectory waypoint".into()));
            }
            p[2] = wrap_angle(p[2]);
        }
        Ok(Self { points })
    }

    /// Builds from a flat `[x0, y0, h0, x1, ...]` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat trajectory length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xy(&self, i: usize) -> Point {
        [self.points[i][0], self.points[i][1]]
    }

    pub fn positions(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.xy(i)).collect()
    }

    pub fn endpoint(&self) -> Point {
        self.xy(self.len() - 1)
    }

    /// Time stamp of waypoint `i` relative to the planning instant.
    pub fn time(i: usize) -> f64 {
        (i + 1) as f64 * DT
    }

    /// Re-expresses the trajectory in the parent frame of `pose`.
    pub fn to_world(&self, pose: &Pose) -> Trajectory {
        let points = self
            .points
            .iter()
            .map(|p| {
                let w = pose.to_world([p[0], p[1]]);
                [w[0], w[1], wrap_angle(p[2] + pose.heading)]
            })
            .collect();
        Trajectory { points }
    }

    /// Re-expresses a parent-frame trajectory in the frame of `pose`.
    pub fn to_local(&self, pose: &Pose) -> Trajectory {
        let points = self
            .points
            .iter()
            .map(|p| {
                let l = pose.to_local([p[0], p[1]]);
                [l[0], l[1], wrap_angle(p[2] - pose.heading)]
            })
            .collect();
        Trajectory { points }
    }

    /// Positions with the planning origin prepended, for finite differences.
    pub fn with_origin(&self) -> Vec<Point> {
        let mut v = Vec::with_capacity(self.len() + 1);
        v.push([0.0, 0.0]);
        v.extend(self.positions());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let t = Trajectory::new(vec![[1.0, 2.0, 0.1], [3.0, 2.5, 0.2]]).unwrap();
        let pose = Pose::new(5.0, -1.0, 2.0);
        let back = t.to_world(&pose).to_local(&pose);
        for (a, b) in t.points().iter().zip(back.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn headings_are_wrapped() {
        let t = Trajectory::new(vec![[0.0, 0.0, 7.0]]).unwrap();
        assert!((t.points()[0][2] - (7.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn flat_round_trip_and_errors() {
        let t = Trajectory::from_flat(&[1.0, 2.0, 0.0, 3.0, 4.0, 0.5]).unwrap();
        assert_eq!(t.flat(), vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.5]);
        assert!(Trajectory::from_flat(&[1.0]).is_err());
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }
}
