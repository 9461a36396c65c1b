//! Small building blocks shared by the learnable modules.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.add_weight(format!("{name}.w"), inputs, outputs, rng);
        let b = bias.then(|| params.add(format!("{name}.b"), Tensor::zeros(&[1, outputs])));
        Self {
            w,
            b,
            inputs,
            outputs,
        }
    }

    pub fn zero(&self, params: &mut ParamSet) {
        params.value_mut(self.w).data_mut().fill(0.0);
        if let Some(b) = self.b {
            params.value_mut(b).data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(params, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Feed-forward stack with SiLU between layers (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        Self::with_bias(params, name, dims, true, rng)
    }

    pub fn with_bias(
        params: &mut ParamSet,
        name: &str,
        dims: &[usize],
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], bias, rng))
            .collect();
        Self { layers }
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x)?;
            if i + 1 < n {
                x = tape.silu(x);
            }
        }
        Ok(x)
    }
}

/// Single-head cross-attention from query rows onto key/value rows.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub dim: usize,
}

impl CrossAttention {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        source_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            q: Linear::new(params, &format!("{name}.q"), dim, dim, false, rng),
            k: Linear::new(params, &format!("{name}.k"), source_dim, dim, false, rng),
            v: Linear::new(params, &format!("{name}.v"), source_dim, dim, false, rng),
            out: Linear::new(params, &format!("{name}.o"), dim, dim, true, rng),
            dim,
        }
    }

    /// `query: [m, dim]`, `source: [n, source_dim]` → `[m, dim]`. An empty
    /// source contributes exactly zero.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, query: Var, source: Var) -> Result<Var> {
        let m = tape.value(query).rows();
        if tape.value(source).rows() == 0 || tape.value(source).is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[m, self.dim])));
        }
        let q = self.q.forward(tape, params, query)?;
        let k = self.k.forward(tape, params, source)?;
        let v = self.v.forward(tape, params, source)?;
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (self.dim as f64).sqrt());
        let attn = tape.softmax_rows(logits);
        let ctx = tape.matmul(attn, v)?;
        self.out.forward(tape, params, ctx)
    }
}
