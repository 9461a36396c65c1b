//! Per-scene scoring of vocabulary candidates and raw-goal selection.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{rng, softmax};
use crate::scene::{Point, Pose, RoadLayout};
use crate::vocab::GoalVocabulary;

/// Floor inside the log of the drivability score.
pub const DAC_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub temperature: f64,
    pub w_dac: f64,
    pub w_dis: f64,
    /// Gaussian noise added to the drivability scores.
    pub sigma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            temperature: 3.0,
            w_dac: 1.0,
            w_dis: 1.0,
            sigma: 0.0,
        }
    }
}

/// Simulated scorer errors. The endpoint the proximity score is computed
/// from gets a Laplace offset of scale `jitter` per axis and, with
/// probability `outlier_prob`, a further displacement whose length is
/// uniform in `[outlier_min, outlier_max]` metres. When
/// `persistent` is set the draw is made once per episode, so a corrupted
/// episode keeps the same ego-frame offset on every frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    pub outlier_prob: f64,
    pub outlier_min: f64,
    pub outlier_max: f64,
    pub jitter: f64,
    pub persistent: bool,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            outlier_prob: 0.0,
            outlier_min: 4.0,
            outlier_max: 12.0,
            jitter: 0.0,
            persistent: true,
        }
    }
}

impl Corruption {
    pub fn none() -> Self {
        Self::default()
    }

    /// Returns the perturbed endpoint and whether an outlier was applied.
    pub fn apply(&self, g_end: Point, rng: &mut impl Rng) -> (Point, bool) {
        let outlier = self.outlier_prob > 0.0 && rng.random::<f64>() < self.outlier_prob;
        let mut p = g_end;
        if outlier {
            let r = rng.random_range(self.outlier_min..=self.outlier_max);
            let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            p = [p[0] + r * a.cos(), p[1] + r * a.sin()];
        }
        if self.jitter > 0.0 {
            for v in &mut p {
                *v += laplace_sample(self.jitter, rng);
            }
        }
        (p, outlier)
    }
}

fn laplace_sample(b: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalScores {
    pub dac: Vec<f64>,
    pub dis: Vec<f64>,
    pub raw_index: usize,
}

/// Drivability of every candidate (ego frame, placed in the world by `pose`),
/// optionally perturbed by clamped Gaussian noise.
pub fn score_dac(
    vocab: &GoalVocabulary,
    layout: &RoadLayout,
    pose: &Pose,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("dac noise sigma must be >= 0, got {sigma}")));
    }
    let truth = vocab
        .candidates()
        .iter()
        .map(|&g| if layout.contains(pose.to_world(g)) { 1.0 } else { 0.0 });
    if sigma == 0.0 {
        return Ok(truth.collect());
    }
    let mut r = rng::seeded(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(truth
        .map(|d| (d + normal.sample(&mut r)).clamp(0.0, 1.0))
        .collect())
}

/// `softmax(-‖g_i - g_end‖ / temperature)`.
pub fn score_dis(vocab: &GoalVocabulary, g_end: Point, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let logits: Vec<f64> = vocab
        .candidates()
        .iter()
        .map(|g| -crate::scene::dist(*g, g_end) / temperature)
        .collect();
    Ok(softmax(&logits))
}

/// Log-linear combination of both scores.
pub fn combined_score(dac: f64, dis: f64, w_dac: f64, w_dis: f64) -> f64 {
    w_dac * (dac + DAC_EPS).ln() + w_dis * dis.ln()
}

/// Argmax of the combined score; ties go to the lowest index.
pub fn select_raw_goal(dac: &[f64], dis: &[f64], w_dac: f64, w_dis: f64) -> Result<usize> {
    if dac.len() != dis.len() || dac.is_empty() {
        return Err(Error::invalid("score vectors must be non-empty and equally long"));
    }
    if !(w_dac >= 0.0 && w_dis >= 0.0) || (w_dac == 0.0 && w_dis == 0.0) {
        return Err(Error::invalid("score weights must be >= 0 and not both zero"));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (&a, &b)) in dac.iter().zip(dis).enumerate() {
        let s = combined_score(a, b, w_dac, w_dis);
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(best.1)
}

/// Full scorer pass for one scene.
pub fn score_goals(
    vocab: &GoalVocabulary,
    layout: &RoadLayout,
    pose: &Pose,
    g_end: Point,
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<GoalScores> {
    let dac = score_dac(vocab, layout, pose, cfg.sigma, seed)?;
    let dis = score_dis(vocab, g_end, cfg.temperature)?;
    let raw_index = select_raw_goal(&dac, &dis, cfg.w_dac, cfg.w_dis)?;
    Ok(GoalScores {
        dac,
        dis,
        raw_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(pts: &[Point]) -> GoalVocabulary {
        GoalVocabulary::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn dis_symmetry_and_peak() {
        let v = vocab(&[[-1.0, 0.0], [1.0, 0.0]]);
        let d = score_dis(&v, [0.0, 0.0], 1.0).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15);
        let v = vocab(&[[5.0, 5.0], [0.0, 0.0], [-5.0, 3.0]]);
        let d = score_dis(&v, [0.0, 0.0], 1.0).unwrap();
        assert!(d[1] > d[0] && d[1] > d[2]);
        assert!(score_dis(&v, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn dis_flattens_at_high_temperature() {
        let v = vocab(&[[0.0, 0.0], [3.0, 0.0], [0.0, 9.0], [20.0, 20.0]]);
        let d = score_dis(&v, [1.0, 1.0], 1e6).unwrap();
        assert!(d.iter().all(|x| (x - 0.25).abs() < 1e-3));
    }

    #[test]
    fn drivable_beats_slightly_closer_offroad() {
        let dac = [0.0, 1.0];
        let dis = [0.6, 0.4];
        assert_eq!(select_raw_goal(&dac, &dis, 1.0, 1.0).unwrap(), 1);
        assert!(select_raw_goal(&dac, &dis, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_is_clamped_and_seeded() {
        let s = crate::scene::generate_scenario(crate::scene::LayoutKind::Curve, 1, 0.0).unwrap();
        let v = vocab(&[[5.0, 0.0], [5.0, 30.0], [10.0, -2.0]]);
        let clean = score_dac(&v, &s.layout, &Pose::IDENTITY, 0.0, 1).unwrap();
        assert_eq!(clean[0], 1.0);
        assert_eq!(clean[1], 0.0);
        let a = score_dac(&v, &s.layout, &Pose::IDENTITY, 0.3, 42).unwrap();
        let b = score_dac(&v, &s.layout, &Pose::IDENTITY, 0.3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(score_dac(&v, &s.layout, &Pose::IDENTITY, -0.1, 0).is_err());
    }
}
