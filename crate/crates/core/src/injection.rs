//! Guidance injection: BEV features sampled at the goal, gated by a
//! confidence weight computed from the Laplace scale, then fused residually
//! into every trajectory query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Linear, Mlp, ParamSet, Tape, Tensor, Var};
use crate::scene::bev::{BevGrid, Sample, BEV_CHANNELS};
use crate::scene::Point;
use crate::uncertainty::Guidance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionConfig {
    /// Query dimension `d`.
    pub dim: usize,
    /// Sinusoidal width per scale axis.
    pub embed_dim: usize,
    pub gate_hidden: usize,
    pub fusion_hidden: usize,
    pub dropout: f64,
    /// One gate value shared by all feature dimensions.
    pub scalar_gate: bool,
    pub fusion_bias: bool,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            embed_dim: 16,
            gate_hidden: 32,
            fusion_hidden: 64,
            dropout: 0.1,
            scalar_gate: false,
            fusion_bias: true,
        }
    }
}

/// Bilinear sample of every channel at `mu`; points outside the grid are
/// clamped to the border and flagged.
pub fn project_phi(grid: &BevGrid, mu: Point) -> Result<Sample> {
    if !mu.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("projection point".into()));
    }
    let s = grid.sample(mu);
    if s.clamped {
        log::debug!("goal {mu:?} outside the BEV extent; clamped to the border");
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct InjectionModel {
    pub config: InjectionConfig,
    lift: Linear,
    gate: Mlp,
    fusion: Mlp,
}

impl InjectionModel {
    /// Registers the parameters under `name`. Gate and fusion output layers
    /// start at zero, so the gate is 0.5 and the residual vanishes.
    pub fn new(params: &mut ParamSet, name: &str, config: InjectionConfig, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let lift = Linear::new(params, &format!("{name}.lift"), BEV_CHANNELS, d, true, rng);
        let gate_out = if config.scalar_gate { 1 } else { d };
        let gate = Mlp::new(
            params,
            &format!("{name}.gate"),
            &[2 * config.embed_dim, config.gate_hidden, gate_out],
            rng,
        );
        let fusion = Mlp::with_bias(
            params,
            &format!("{name}.fusion"),
            &[d, config.fusion_hidden, d],
            config.fusion_bias,
            rng,
        );
        gate.last().zero(params);
        fusion.last().zero(params);
        Self {
            config,
            lift,
            gate,
            fusion,
        }
    }

    /// `sigmoid(MLP(Emb(b₁) ‖ Emb(b₂)))` for `b` of shape `[1, 2]`.
    pub fn confidence_weight_var(&self, tape: &mut Tape, params: &ParamSet, b: Var) -> Result<Var> {
        let e = tape.sinusoidal(b, self.config.embed_dim)?;
        let h = self.gate.forward(tape, params, e)?;
        Ok(tape.sigmoid(h))
    }

    pub fn confidence_weight(&self, params: &ParamSet, b: [f64; 2]) -> Result<Vec<f64>> {
        check_scale(b)?;
        let mut tape = Tape::new();
        let bv = tape.constant(Tensor::row(&b));
        let w = self.confidence_weight_var(&mut tape, params, bv)?;
        Ok(tape.value(w).data().to_vec())
    }

    /// `Lift(Φ) ⊙ w`, `[1, d]`.
    pub fn guidance_feature_var(&self, tape: &mut Tape, params: &ParamSet, phi: Var, b: Var) -> Result<Var> {
        let lifted = self.lift.forward(tape, params, phi)?;
        let w = self.confidence_weight_var(tape, params, b)?;
        if self.config.scalar_gate {
            let ones = tape.constant(Tensor::full(&[1, self.config.dim], 1.0));
            let w = tape.matmul(w, ones)?;
            tape.mul(lifted, w)
        } else {
            tape.mul(lifted, w)
        }
    }

    pub fn guidance_feature(&self, params: &ParamSet, grid: &BevGrid, g: &Guidance) -> Result<Vec<f64>> {
        check_scale(g.b)?;
        let phi = project_phi(grid, g.mu)?;
        let mut tape = Tape::new();
        let phi = tape.constant(Tensor::row(&phi.features));
        let b = tape.constant(Tensor::row(&g.b));
        let f = self.guidance_feature_var(&mut tape, params, phi, b)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// Inverted-dropout mask for one residual row.
    pub fn dropout_mask(&self, rng: &mut impl Rng) -> Tensor {
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        let data = (0..self.config.dim)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Tensor::new(vec![1, self.config.dim], data).expect("mask shape")
    }

    /// `F_traj + Dropout(MLP(F_guidance))`, the same residual on every row.
    pub fn inject_var(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        f_traj: Var,
        f_guid: Var,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let mut r = self.fusion.forward(tape, params, f_guid)?;
        if let Some(m) = mask {
            let m = tape.constant(m.clone());
            r = tape.mul(r, m)?;
        }
        tape.add_row(f_traj, r)
    }

    /// Dropout is drawn from `rng` only when `training` is set.
    pub fn inject(
        &self,
        params: &ParamSet,
        f_traj: &Tensor,
        f_guid: &[f64],
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        if f_traj.cols() != self.config.dim || f_guid.len() != self.config.dim {
            return Err(Error::Shape {
                op: "inject",
                left: f_traj.shape().to_vec(),
                right: vec![1, f_guid.len()],
            });
        }
        let mask = training.then(|| self.dropout_mask(rng));
        let mut tape = Tape::new();
        let q = tape.constant(f_traj.clone());
        let g = tape.constant(Tensor::row(f_guid));
        let out = self.inject_var(&mut tape, params, q, g, mask.as_ref())?;
        Ok(tape.value(out).clone())
    }

    pub fn fusion(&self) -> &Mlp {
        &self.fusion
    }

    pub fn gate(&self) -> &Mlp {
        &self.gate
    }
}

fn check_scale(b: [f64; 2]) -> Result<()> {
    if b.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("guidance scale must be positive, got {b:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng;
    use crate::scene::{generate_scenario, rasterize_bev, GridConfig, LayoutKind};

    fn model(cfg: InjectionConfig) -> (ParamSet, InjectionModel) {
        let mut p = ParamSet::new();
        let m = InjectionModel::new(&mut p, "inj", cfg, &mut rng::seeded(4));
        (p, m)
    }

    #[test]
    fn zero_gate_is_half() {
        let (p, m) = model(InjectionConfig::default());
        let w = m.confidence_weight(&p, [0.3, 2.0]).unwrap();
        assert_eq!(w.len(), 64);
        assert!(w.iter().all(|&v| v == 0.5));
        assert!(m.confidence_weight(&p, [0.0, 1.0]).is_err());
        let (p, m) = model(InjectionConfig {
            scalar_gate: true,
            ..Default::default()
        });
        assert_eq!(m.confidence_weight(&p, [1.0, 1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn zero_fusion_preserves_queries() {
        let (p, m) = model(InjectionConfig::default());
        let q = Tensor::from_rows(&[vec![0.25; 64], vec![-1.5; 64]], 64).unwrap();
        let out = m.inject(&p, &q, &[3.0; 64], true, &mut rng::seeded(0)).unwrap();
        assert_eq!(out, q);
        assert!(m.inject(&p, &q, &[3.0; 8], false, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn guidance_feature_matches_gate_times_lift() {
        let s = generate_scenario(LayoutKind::Curve, 5, 0.3).unwrap();
        let grid = rasterize_bev(&s, &GridConfig::default()).unwrap();
        let (p, m) = model(InjectionConfig::default());
        let g = Guidance::new([12.0, 1.0], [0.5, 0.5]).unwrap();
        let f = m.guidance_feature(&p, &grid, &g).unwrap();
        let phi = grid.sample(g.mu).features;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&phi));
        let lifted = m.lift.forward(&mut tape, &p, x).unwrap();
        for (a, b) in f.iter().zip(tape.value(lifted).data()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }
}
