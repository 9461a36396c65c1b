//! Named parameter storage, gradient accumulators, the Adam optimizer and
//! the `GRT1` checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"GRT1"  u32 count
//! repeat count times:
//!     u32 name_len, name bytes (UTF-8), u32 rank, rank × u64 dims, f64 payload
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GRT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        ParamId(id)
    }

    /// Adds a `[rows, cols]` weight with scaled Gaussian (He-style) init.
    pub fn add_weight(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (1.0 / rows.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        let acc = self.grads[id.0].data_mut();
        for (a, g) in acc.iter_mut().zip(grad.data()) {
            *a += g;
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Replaces every value with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let src = other.value(src);
            if src.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
            for &d in value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<ParamSet> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected GRT1")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Format(format!("parameter name is not UTF-8: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            if set.id(&name).is_some() {
                return Err(Error::Format(format!("duplicate parameter `{name}`")));
            }
            set.add(name, Tensor::new(dims, data)?);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
        let f = std::fs::File::open(path)?;
        ParamSet::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        if self.m.len() != params.len() {
            self.m = params.values.iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let n = params.grad_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = params.grads[i].data();
            let w = params.values[i].data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                let gj = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine decay from `base` to `base * final_ratio` over `epochs`.
pub fn cosine_lr(base: f64, final_ratio: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return base;
    }
    let x = epoch as f64 / (epochs - 1) as f64;
    base * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos()))
}
