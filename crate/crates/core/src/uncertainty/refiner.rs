use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{gaussian_nll_var, laplace_nll_var, Guidance};
use crate::error::{Error, Result};
use crate::math::embed::sinusoidal_values;
use crate::math::{rng, Adam, CrossAttention, Mlp, ParamSet, Tape, Tensor, Var};
use crate::scene::bev::{BevGrid, AGENT_FEATURES, BEV_CHANNELS, CH_POS_X, CH_POS_Y, POS_SCALE};
use crate::scene::Point;

/// Additive floor on the predicted scale (m).
pub const B_FLOOR: f64 = 1e-3;
/// Sinusoidal embedding width per goal coordinate.
pub const QUERY_EMBED_DIM: usize = 8;
const QUERY_INPUTS: usize = 2 + 2 * QUERY_EMBED_DIM + BEV_CHANNELS + 4 + 4;
const TOKEN_INPUTS: usize = BEV_CHANNELS + 3;
const AGENT_INPUTS: usize = AGENT_FEATURES + 2;

/// Likelihood the refiner is trained with; the scale head is read as `b`
/// (Laplace) or `σ` (Gaussian).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NllKind {
    Laplace,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub dim: usize,
    pub ffn_dim: usize,
    /// BEV cells averaged per token side.
    pub pool: usize,
    /// Metres per unit of the offset head.
    pub offset_scale: f64,
    pub nll: NllKind,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            ffn_dim: 64,
            pool: 8,
            offset_scale: 5.0,
            nll: NllKind::Laplace,
        }
    }
}

/// Everything the refiner sees for one goal query.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerInput {
    pub g_raw: Point,
    /// BEV features sampled at `g_raw`.
    pub goal_features: Vec<f64>,
    /// Pooled BEV tokens `[tokens, C]`.
    pub tokens: Tensor,
    /// Agent rows `[n, AGENT_FEATURES]`.
    pub agents: Tensor,
    /// Ego velocity and acceleration in the ego frame.
    pub motion: [f64; 4],
    pub command: [f64; 4],
}

impl RefinerInput {
    pub fn new(
        grid: &BevGrid,
        tokens: Tensor,
        agents: Tensor,
        g_raw: Point,
        motion: [f64; 4],
        command: [f64; 4],
    ) -> Result<Self> {
        if !g_raw.iter().chain(motion.iter()).all(|v| v.is_finite())
            || !tokens.all_finite()
            || !agents.all_finite()
        {
            return Err(Error::NonFinite("refiner input".into()));
        }
        if tokens.cols() != BEV_CHANNELS || (agents.rows() > 0 && agents.cols() != AGENT_FEATURES) {
            return Err(Error::Shape {
                op: "refiner input",
                left: tokens.shape().to_vec(),
                right: agents.shape().to_vec(),
            });
        }
        Ok(Self {
            g_raw,
            goal_features: grid.sample(g_raw).features,
            tokens,
            agents,
            motion,
            command,
        })
    }

    fn query_features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(QUERY_INPUTS);
        v.extend([self.g_raw[0] * POS_SCALE, self.g_raw[1] * POS_SCALE]);
        v.extend(sinusoidal_values(self.g_raw[0], QUERY_EMBED_DIM).expect("even dim"));
        v.extend(sinusoidal_values(self.g_raw[1], QUERY_EMBED_DIM).expect("even dim"));
        v.extend(&self.goal_features);
        v.extend(self.motion.iter().map(|m| m * POS_SCALE));
        v.extend(self.command);
        v
    }

    /// Tokens augmented with their offset from the goal query.
    fn token_features(&self) -> Tensor {
        let (gx, gy) = (self.g_raw[0] * POS_SCALE, self.g_raw[1] * POS_SCALE);
        let n = self.tokens.rows();
        let mut data = Vec::with_capacity(n * TOKEN_INPUTS);
        for r in 0..n {
            let row = self.tokens.row_slice(r);
            let (dx, dy) = (row[CH_POS_X] - gx, row[CH_POS_Y] - gy);
            data.extend(row);
            data.extend([dx, dy, dx * dx + dy * dy]);
        }
        Tensor::new(vec![n, TOKEN_INPUTS], data).expect("token rows")
    }

    fn agent_features(&self) -> Tensor {
        let (gx, gy) = (self.g_raw[0] * POS_SCALE, self.g_raw[1] * POS_SCALE);
        let n = self.agents.rows();
        if self.agents.is_empty() {
            return Tensor::zeros(&[0, AGENT_INPUTS]);
        }
        let mut data = Vec::with_capacity(n * AGENT_INPUTS);
        for r in 0..n {
            let row = self.agents.row_slice(r);
            data.extend(row);
            data.extend([row[0] - gx, row[1] - gy]);
        }
        Tensor::new(vec![n, AGENT_INPUTS], data).expect("agent rows")
    }
}

#[derive(Clone, Debug)]
struct RefinerNet {
    embed: Mlp,
    spatial: CrossAttention,
    agent: CrossAttention,
    ffn: Mlp,
    mu_head: Mlp,
    b_head: Mlp,
}

/// Goal-query refiner: embed `g_raw`, attend to BEV tokens, then to agents,
/// then a feed-forward block; two heads give the offset of `μ` from `g_raw`
/// and the scale.
#[derive(Clone, Debug)]
pub struct Refiner {
    pub params: ParamSet,
    pub config: RefinerConfig,
    net: RefinerNet,
}

impl Refiner {
    pub fn new(config: RefinerConfig, seed: u64) -> Self {
        let mut r = rng::derived(seed, 0x5EF1);
        let mut params = ParamSet::new();
        let d = config.dim;
        let net = RefinerNet {
            embed: Mlp::new(&mut params, "refiner.embed", &[QUERY_INPUTS, d, d], &mut r),
            spatial: CrossAttention::new(&mut params, "refiner.spatial", d, TOKEN_INPUTS, &mut r),
            agent: CrossAttention::new(&mut params, "refiner.agent", d, AGENT_INPUTS, &mut r),
            ffn: Mlp::new(&mut params, "refiner.ffn", &[d, config.ffn_dim, d], &mut r),
            mu_head: Mlp::new(&mut params, "refiner.mu", &[d, d, 2], &mut r),
            b_head: Mlp::new(&mut params, "refiner.b", &[d, d, 2], &mut r),
        };
        net.mu_head.last().zero(&mut params);
        net.b_head.last().zero(&mut params);
        Self {
            params,
            config,
            net,
        }
    }

    /// Records the forward pass; returns `(μ, b)` as `[1, 2]` nodes.
    pub fn forward(&self, tape: &mut Tape, input: &RefinerInput) -> Result<(Var, Var)> {
        let p = &self.params;
        let q_in = tape.constant(Tensor::row(&input.query_features()));
        let q0 = self.net.embed.forward(tape, p, q_in)?;

        let tokens = tape.constant(input.token_features());
        let s = self.net.spatial.forward(tape, p, q0, tokens)?;
        let q1 = tape.add(q0, s)?;
        let q1 = tape.layer_norm_rows(q1);

        let agents = tape.constant(input.agent_features());
        let a = self.net.agent.forward(tape, p, q1, agents)?;
        let q2 = tape.add(q1, a)?;
        let q2 = tape.layer_norm_rows(q2);

        let f = self.net.ffn.forward(tape, p, q2)?;
        let q3 = tape.add(q2, f)?;
        let q3 = tape.layer_norm_rows(q3);

        let off = self.net.mu_head.forward(tape, p, q3)?;
        let off = tape.scale(off, self.config.offset_scale);
        let g = tape.constant(Tensor::row(&input.g_raw));
        let mu = tape.add(g, off)?;
        let raw_b = self.net.b_head.forward(tape, p, q3)?;
        let b = tape.softplus(raw_b);
        let b = tape.add_scalar(b, B_FLOOR);
        Ok((mu, b))
    }

    pub fn refine(&self, input: &RefinerInput) -> Result<Guidance> {
        let mut tape = Tape::new();
        let (mu, b) = self.forward(&mut tape, input)?;
        let (mu, b) = (tape.value(mu).data(), tape.value(b).data());
        Guidance::new([mu[0], mu[1]], [b[0], b[1]])
    }

    /// Per-sample loss under the configured likelihood.
    pub fn loss(&self, tape: &mut Tape, sample: &RefinerSample) -> Result<Var> {
        let (mu, b) = self.forward(tape, &sample.input)?;
        let target = Tensor::row(&sample.target);
        match self.config.nll {
            NllKind::Laplace => laplace_nll_var(tape, &target, mu, b),
            NllKind::Gaussian => gaussian_nll_var(tape, &target, mu, b),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: impl AsRef<Path>, config: RefinerConfig) -> Result<Self> {
        let mut model = Self::new(config, 0);
        model.params.load_from(&ParamSet::load(path)?)?;
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct RefinerSample {
    pub input: RefinerInput,
    /// Ground-truth goal `g_end`.
    pub target: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate at the last epoch relative to `lr` (cosine schedule).
    pub final_lr_ratio: f64,
    pub seed: u64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 16,
            lr: 3e-3,
            final_lr_ratio: 0.05,
            seed: 0,
        }
    }
}

/// Trains with minibatch Adam. Returns the loss curve: entry 0 is the mean
/// loss before training, entry `e` the mean loss seen during epoch `e`.
pub fn train_refiner(
    model: &mut Refiner,
    data: &[RefinerSample],
    cfg: &RefinerTrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("refiner training set is empty"));
    }
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut initial = 0.0;
    for s in data {
        let mut tape = Tape::new();
        let l = model.loss(&mut tape, s)?;
        initial += tape.value(l).item();
    }
    curve.push(initial / data.len() as f64);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::derived(cfg.seed, 0x7EA1);
    let mut opt = Adam::new(cfg.lr);
    let batch = cfg.batch.max(1);
    for epoch in 1..=cfg.epochs {
        opt.lr = crate::math::cosine_lr(cfg.lr, cfg.final_lr_ratio, epoch - 1, cfg.epochs);
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            model.params.zero_grad();
            for &i in chunk {
                let mut tape = Tape::new();
                let l = model.loss(&mut tape, &data[i])?;
                let v = tape.value(l).item();
                if !v.is_finite() {
                    return Err(Error::Diverged { epoch, loss: v });
                }
                total += v;
                let scaled = tape.scale(l, 1.0 / chunk.len() as f64);
                tape.backward(scaled, &mut model.params)?;
            }
            opt.step(&mut model.params);
        }
        let mean = total / data.len() as f64;
        log::debug!("refiner epoch {epoch}: L_unc = {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}
