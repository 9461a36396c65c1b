//! Bird's-eye-view rasterization in the ego frame and the projection of
//! continuous ego-frame points onto the grid.
//!
//! Cell `(row, col)` covers `x ∈ [x_min + col·res, x_min + (col+1)·res)` and
//! `y ∈ [y_min + row·res, ...)`. A point's continuous cell coordinate is
//! `((x - x_min)/res, (y - y_min)/res)`, so cell centers sit at half-integers.

use serde::{Deserialize, Serialize};

use super::geometry::{foot_on_segment, Point, Pose};
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::math::Tensor;

pub const CH_DRIVABLE: usize = 0;
pub const CH_SIGNED_DIST: usize = 1;
pub const CH_OCCUPANCY: usize = 2;
pub const CH_DIR_COS: usize = 3;
pub const CH_DIR_SIN: usize = 4;
pub const CH_POS_X: usize = 5;
pub const CH_POS_Y: usize = 6;
pub const BEV_CHANNELS: usize = 7;

/// Signed distance is clipped to this magnitude (m).
pub const SD_CLIP: f64 = 8.0;
/// Scale applied to the position channels.
pub const POS_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    /// Metres per cell.
    pub resolution: f64,
    pub x_min: f64,
    pub y_min: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            resolution: 0.5,
            x_min: -32.0,
            y_min: -32.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::invalid(format!(
                "grid resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::invalid("grid needs at least 2x2 cells"));
        }
        Ok(())
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.width as f64 * self.resolution
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height as f64 * self.resolution
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        [
            self.x_min + (col as f64 + 0.5) * self.resolution,
            self.y_min + (row as f64 + 0.5) * self.resolution,
        ]
    }

    /// Continuous cell coordinate `(u, v)` of a point (column, row order).
    pub fn continuous(&self, p: Point) -> [f64; 2] {
        [
            (p[0] - self.x_min) / self.resolution,
            (p[1] - self.y_min) / self.resolution,
        ]
    }
}

/// Channel-major raster: `data[c][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub config: GridConfig,
    data: Vec<f64>,
}

/// Result of sampling the grid at a continuous point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// The point was outside the grid extent and was clamped to the border.
    pub clamped: bool,
}

impl BevGrid {
    pub fn channels(&self) -> usize {
        BEV_CHANNELS
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        let (h, w) = (self.config.height, self.config.width);
        self.data[(c * h + row) * w + col]
    }

    fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let (h, w) = (self.config.height, self.config.width);
        self.data[(c * h + row) * w + col] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.config.height * self.config.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn cell(&self, row: usize, col: usize) -> Vec<f64> {
        (0..BEV_CHANNELS).map(|c| self.get(c, row, col)).collect()
    }

    /// Bilinear interpolation of all channels at an ego-frame point.
    /// Points outside the extent are clamped to the border cells.
    pub fn sample(&self, p: Point) -> Sample {
        let cfg = &self.config;
        let [u, v] = cfg.continuous(p);
        let clamped = !(0.0..=cfg.width as f64).contains(&u) || !(0.0..=cfg.height as f64).contains(&v);
        let fu = (u - 0.5).clamp(0.0, (cfg.width - 1) as f64);
        let fv = (v - 0.5).clamp(0.0, (cfg.height - 1) as f64);
        let (c0, r0) = (fu.floor() as usize, fv.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(cfg.width - 1), (r0 + 1).min(cfg.height - 1));
        let (du, dv) = (fu - c0 as f64, fv - r0 as f64);
        let features = (0..BEV_CHANNELS)
            .map(|c| {
                let top = self.get(c, r0, c0) * (1.0 - du) + self.get(c, r0, c1) * du;
                let bottom = self.get(c, r1, c0) * (1.0 - du) + self.get(c, r1, c1) * du;
                top * (1.0 - dv) + bottom * dv
            })
            .collect();
        Sample { features, clamped }
    }

    /// Averages `factor × factor` blocks into tokens: returns `[tokens, C]`
    /// with tokens in row-major block order.
    pub fn pooled(&self, factor: usize) -> Result<Tensor> {
        let (h, w) = (self.config.height, self.config.width);
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "pool factor {factor} does not divide grid {h}x{w}"
            )));
        }
        let (ph, pw) = (h / factor, w / factor);
        let norm = (factor * factor) as f64;
        let mut out = Vec::with_capacity(ph * pw * BEV_CHANNELS);
        for br in 0..ph {
            for bc in 0..pw {
                for c in 0..BEV_CHANNELS {
                    let mut acc = 0.0;
                    for r in br * factor..(br + 1) * factor {
                        for col in bc * factor..(bc + 1) * factor {
                            acc += self.get(c, r, col);
                        }
                    }
                    out.push(acc / norm);
                }
            }
        }
        Tensor::new(vec![ph * pw, BEV_CHANNELS], out)
    }
}

struct Segment {
    a: Point,
    b: Point,
    heading: f64,
}

/// Centerline segments that can matter inside the (world-frame) window.
fn clipped_segments(scenario: &Scenario, lo: Point, hi: Point, margin: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    for line in &scenario.layout.centerlines {
        for w in line.points().windows(2) {
            let (a, b) = (w[0], w[1]);
            let outside = a[0].max(b[0]) < lo[0] - margin
                || a[0].min(b[0]) > hi[0] + margin
                || a[1].max(b[1]) < lo[1] - margin
                || a[1].min(b[1]) > hi[1] + margin;
            if !outside {
                out.push(Segment {
                    a,
                    b,
                    heading: (b[1] - a[1]).atan2(b[0] - a[0]),
                });
            }
        }
    }
    out
}

/// Rasterizes the scene around the `t = 0` ego pose.
pub fn rasterize_bev(scenario: &Scenario, cfg: &GridConfig) -> Result<BevGrid> {
    rasterize_bev_at(scenario, &Pose::IDENTITY, 0.0, cfg)
}

/// Rasterizes the scene in the frame of `pose` with agents at time `t`.
pub fn rasterize_bev_at(scenario: &Scenario, pose: &Pose, t: f64, cfg: &GridConfig) -> Result<BevGrid> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut grid = BevGrid {
        config: *cfg,
        data: vec![0.0; BEV_CHANNELS * h * w],
    };

    // world-frame bounding box of the grid
    let corners = [
        [cfg.x_min, cfg.y_min],
        [cfg.x_max(), cfg.y_min],
        [cfg.x_min, cfg.y_max()],
        [cfg.x_max(), cfg.y_max()],
    ]
    .map(|c| pose.to_world(c));
    let lo = [
        corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min),
        corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min),
    ];
    let hi = [
        corners.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max),
        corners.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max),
    ];
    let hw = scenario.layout.half_width;
    let segments = clipped_segments(scenario, lo, hi, hw + SD_CLIP + 1.0);

    let agents: Vec<_> = scenario
        .agents
        .iter()
        .map(|a| a.state_at(&scenario.layout, t).to_local(pose).bbox())
        .collect();

    for row in 0..h {
        for col in 0..w {
            let local = cfg.cell_center(row, col);
            let p = pose.to_world(local);
            let mut best_d2 = f64::INFINITY;
            let mut heading = 0.0;
            for s in &segments {
                let bx = (s.a[0].min(s.b[0]) - p[0]).max(p[0] - s.a[0].max(s.b[0])).max(0.0);
                let by = (s.a[1].min(s.b[1]) - p[1]).max(p[1] - s.a[1].max(s.b[1])).max(0.0);
                if bx * bx + by * by >= best_d2 {
                    continue;
                }
                let (_, _, d2) = foot_on_segment(s.a, s.b, p);
                if d2 < best_d2 {
                    best_d2 = d2;
                    heading = s.heading;
                }
            }
            let sd = hw - best_d2.sqrt();
            let rel = heading - pose.heading;
            grid.set(CH_DRIVABLE, row, col, if sd >= 0.0 { 1.0 } else { 0.0 });
            grid.set(CH_SIGNED_DIST, row, col, sd.clamp(-SD_CLIP, SD_CLIP));
            let occupied = agents.iter().any(|b| b.contains(local));
            grid.set(CH_OCCUPANCY, row, col, if occupied { 1.0 } else { 0.0 });
            grid.set(CH_DIR_COS, row, col, rel.cos());
            grid.set(CH_DIR_SIN, row, col, rel.sin());
            grid.set(CH_POS_X, row, col, local[0] * POS_SCALE);
            grid.set(CH_POS_Y, row, col, local[1] * POS_SCALE);
        }
    }
    Ok(grid)
}

/// Number of features per agent row.
pub const AGENT_FEATURES: usize = 7;

/// One row per agent at time `t`, in the frame of `pose`:
/// relative position, velocity (both scaled by 0.1), half extents and
/// scaled distance to the ego.
pub fn agent_features(scenario: &Scenario, pose: &Pose, t: f64) -> Tensor {
    let mut data = Vec::with_capacity(scenario.agents.len() * AGENT_FEATURES);
    for a in &scenario.agents {
        let s = a.state_at(&scenario.layout, t).to_local(pose);
        data.extend([
            s.center[0] * POS_SCALE,
            s.center[1] * POS_SCALE,
            s.velocity[0] * POS_SCALE,
            s.velocity[1] * POS_SCALE,
            s.half_extent[0],
            s.half_extent[1],
            s.center[0].hypot(s.center[1]) * POS_SCALE,
        ]);
    }
    Tensor::new(vec![scenario.agents.len(), AGENT_FEATURES], data).expect("consistent agent rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, LayoutKind};
    use rand::Rng;

    #[test]
    fn resolution_is_validated() {
        let s = generate_scenario(LayoutKind::Straight, 0, 0.0).unwrap();
        let bad = GridConfig {
            resolution: 0.0,
            ..GridConfig::default()
        };
        assert!(rasterize_bev(&s, &bad).is_err());
    }

    #[test]
    fn raster_matches_continuous_region() {
        let cfg = GridConfig::default();
        let mut rng = crate::math::rng::seeded(9);
        for kind in LayoutKind::ALL {
            let s = generate_scenario(kind, 4, 0.8).unwrap();
            let g = rasterize_bev(&s, &cfg).unwrap();
            for _ in 0..300 {
                let (r, c) = (rng.random_range(0..cfg.height), rng.random_range(0..cfg.width));
                let inside = s.dac_truth(cfg.cell_center(r, c));
                assert_eq!(g.get(CH_DRIVABLE, r, c) == 1.0, inside, "{kind} cell ({r},{c})");
                let sd = g.get(CH_SIGNED_DIST, r, c);
                assert_eq!(sd >= 0.0, inside);
            }
        }
    }

    #[test]
    fn origin_maps_to_grid_center() {
        let cfg = GridConfig::default();
        assert_eq!(cfg.continuous([0.0, 0.0]), [64.0, 64.0]);
    }

    #[test]
    fn sampling_identities() {
        let s = generate_scenario(LayoutKind::Curve, 1, 0.5).unwrap();
        let cfg = GridConfig::default();
        let g = rasterize_bev(&s, &cfg).unwrap();
        let c = cfg.cell_center(40, 70);
        let at = g.sample(c);
        assert!(!at.clamped);
        assert_eq!(at.features, g.cell(40, 70));
        let mid = [c[0] + 0.5 * cfg.resolution, c[1]];
        let m = g.sample(mid).features;
        for ch in 0..BEV_CHANNELS {
            let avg = 0.5 * (g.get(ch, 40, 70) + g.get(ch, 40, 71));
            assert!((m[ch] - avg).abs() < 1e-12);
        }
        let far = g.sample([500.0, 0.0]);
        assert!(far.clamped);
        // position channels are linear, so interpolation recovers the point
        let p = [3.3, -7.1];
        let f = g.sample(p).features;
        assert!((f[CH_POS_X] / POS_SCALE - p[0]).abs() < 1e-9);
        assert!((f[CH_POS_Y] / POS_SCALE - p[1]).abs() < 1e-9);
    }

    #[test]
    fn occupancy_and_far_cells() {
        let cfg = GridConfig {
            x_min: 68.0,
            y_min: 68.0,
            ..GridConfig::default()
        };
        let s = generate_scenario(LayoutKind::Straight, 2, 0.0).unwrap();
        // a straight road along y = 0 is far from this window
        let g = rasterize_bev(&s, &cfg).unwrap();
        assert!(g.channel(CH_DRIVABLE).iter().all(|&v| v == 0.0));
        assert!(g.channel(CH_SIGNED_DIST).iter().all(|&v| v < 0.0));

        let mut empty = s.clone();
        empty.agents.clear();
        let g = rasterize_bev(&empty, &GridConfig::default()).unwrap();
        assert!(g.channel(CH_OCCUPANCY).iter().all(|&v| v == 0.0));
        assert_eq!(agent_features(&empty, &Pose::IDENTITY, 0.0).rows(), 0);
    }

    #[test]
    fn centerline_cell_is_drivable() {
        let s = generate_scenario(LayoutKind::Straight, 5, 0.0).unwrap();
        let cfg = GridConfig::default();
        let g = rasterize_bev(&s, &cfg).unwrap();
        // row 63/64 straddle y = 0; both centers are 0.25 m from the centerline
        assert_eq!(g.get(CH_DRIVABLE, 64, 100), 1.0);
        let pooled = g.pooled(8).unwrap();
        assert_eq!(pooled.shape(), &[256, BEV_CHANNELS]);
    }
}
