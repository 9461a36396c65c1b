//! Reverse-mode automatic differentiation over rank-≤2 tensors.
//!
//! A [`Tape`] records every primitive op together with the values needed by
//! its backward rule. Nodes only ever reference earlier nodes, so walking the
//! record from the loss back to index 0 is a reverse topological order and
//! visits each node once.
//!
//! ```
//! use goaldiff::math::{ParamSet, Tape, Tensor};
//!
//! let mut params = ParamSet::new();
//! let x = params.add("x", Tensor::scalar(3.0));
//! let mut tape = Tape::new();
//! let xv = tape.param(&params, x);
//! let y = tape.mul(xv, xv).unwrap();
//! tape.backward(y, &mut params).unwrap();
//! assert_eq!(params.grad(x).item(), 6.0);
//! ```

use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    RepeatRows(Var),
    Pick { x: Var, index: usize },
    Reshape(Var),
    Sinusoidal { x: Var, dim: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable parameter. Repeated calls with the same id reuse one node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let t = self.zip(a, b, |x, y| x / y);
        Ok(self.push(t, Op::Div(a, b)))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Shape {
                op,
                left: ta.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `a[m, n] + row[1, n]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let n = self.value(a).cols();
        let r = self.value(row).data().to_vec();
        let mut t = self.value(a).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += r[i % n];
        }
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    /// `a[m, n] ⊙ row[1, n]`, broadcasting the row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let n = self.value(a).cols();
        let r = self.value(row).data().to_vec();
        let mut t = self.value(a).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v *= r[i % n];
        }
        Ok(self.push(t, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * super::tensor::sigmoid(x));
        self.push(t, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(super::tensor::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(super::tensor::softplus);
        self.push(t, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        self.push(t, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.cols();
        let mut data = Vec::with_capacity(src.len());
        for r in 0..src.rows() {
            data.extend(super::tensor::softmax(src.row_slice(r)));
        }
        let _ = n;
        let t = Tensor::new(src.shape().to_vec(), data).expect("shape");
        self.push(t, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut data = Vec::with_capacity(src.len());
        for r in 0..src.rows() {
            let row = src.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let t = Tensor::new(src.shape().to_vec(), data).expect("shape");
        self.push(t, Op::LogSoftmaxRows(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.cols() as f64;
        let mut data = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(src.rows());
        for r in 0..src.rows() {
            let row = src.row_slice(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|v| (v - mean) * is));
        }
        let t = Tensor::new(src.shape().to_vec(), data).expect("shape");
        self.push(t, Op::LayerNormRows { x: a, inv_std })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Column means, `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        self.push(Tensor::row(&out), Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if start + len > src.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: src.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(src.rows() * len);
        for r in 0..src.rows() {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        let t = Tensor::new(vec![src.rows(), len], data)?;
        Ok(self.push(t, Op::SliceCols { x: a, start }))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let n = src.cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= src.rows() {
                return Err(Error::Shape {
                    op: "select_rows",
                    left: src.shape().to_vec(),
                    right: vec![r],
                });
            }
            data.extend_from_slice(src.row_slice(r));
        }
        let t = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.push(
            t,
            Op::SelectRows {
                x: a,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Tiles a `[1, n]` row into `[m, n]`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let src = self.value(a);
        if src.rows() != 1 {
            return Err(Error::Shape {
                op: "repeat_rows",
                left: src.shape().to_vec(),
                right: vec![1, src.cols()],
            });
        }
        let mut data = Vec::with_capacity(m * src.cols());
        for _ in 0..m {
            data.extend_from_slice(src.data());
        }
        let t = Tensor::new(vec![m, src.cols()], data)?;
        Ok(self.push(t, Op::RepeatRows(a)))
    }

    /// Extracts one element (flat row-major index) as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let src = self.value(a);
        if index >= src.len() {
            return Err(Error::Shape {
                op: "pick",
                left: src.shape().to_vec(),
                right: vec![index],
            });
        }
        let v = src.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { x: a, index }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Embeds every entry of `a[m, c]` with [`super::embed::sinusoidal_embed`],
    /// giving `[m, c * dim]` (entries of a row embedded side by side).
    pub fn sinusoidal(&mut self, a: Var, dim: usize) -> Result<Var> {
        let src = self.value(a);
        let mut data = Vec::with_capacity(src.len() * dim);
        for &v in src.data() {
            data.extend(super::embed::sinusoidal_values(v, dim)?);
        }
        let t = Tensor::new(vec![src.rows(), src.cols() * dim], data)?;
        Ok(self.push(t, Op::Sinusoidal { x: a, dim }))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let d = self.sub(pred, t)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Mean squared error against a constant target.
    pub fn l2_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let d = self.sub(pred, t)?;
        let s = self.square(d);
        Ok(self.mean(s))
    }

    /// Accumulates d`loss`/dθ into `params` for every parameter on the tape.
    /// Parameters the loss does not reach receive nothing; call
    /// [`ParamSet::zero_grad`] first to start from zero.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                left: self.shape(loss),
                right: vec![1],
            });
        }
        let grads = self.gradients(loss);
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                params.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    /// Gradient of a scalar `loss` with respect to an arbitrary node.
    pub fn grad_wrt(&self, loss: Var, wrt: Var) -> Result<Tensor> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape {
                op: "grad_wrt (loss must be scalar)",
                left: self.shape(loss),
                right: vec![1],
            });
        }
        let grads = self.gradients(loss);
        Ok(grads[wrt.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value(wrt).shape())))
    }

    fn gradients(&self, loss: Var) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(b).transpose()).expect("matmul grad");
                let gb = val(a).transpose().matmul(g).expect("matmul grad");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, elementwise(g, val(b), |g, y| g * y));
                accumulate(grads, *b, elementwise(g, val(a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(a), val(b));
                accumulate(grads, *a, elementwise(g, tb, |g, y| g / y));
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .zip(tb.data())
                    .map(|((&g, &x), &y)| -g * x / (y * y))
                    .collect();
                accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), gb).expect("shape"));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, column_sums(g));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(a), val(row));
                let n = ta.cols();
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &gv)| gv * tr.data()[k % n])
                    .collect();
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga).expect("shape"));
                let prod = elementwise(g, ta, |g, x| g * x);
                let mut gr = column_sums(&prod);
                gr = gr.reshape(tr.shape()).expect("row shape");
                accumulate(grads, *row, gr);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => accumulate(
                grads,
                *a,
                elementwise(g, val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::Silu(a) => accumulate(
                grads,
                *a,
                elementwise(g, val(a), |g, x| {
                    let s = super::tensor::sigmoid(x);
                    g * (s + x * s * (1.0 - s))
                }),
            ),
            Op::Sigmoid(a) => accumulate(grads, *a, elementwise(g, out, |g, s| g * s * (1.0 - s))),
            Op::Softplus(a) => accumulate(
                grads,
                *a,
                elementwise(g, val(a), |g, x| g * super::tensor::sigmoid(x)),
            ),
            Op::Tanh(a) => accumulate(grads, *a, elementwise(g, out, |g, t| g * (1.0 - t * t))),
            Op::Exp(a) => accumulate(grads, *a, elementwise(g, out, |g, e| g * e)),
            Op::Log(a) => accumulate(grads, *a, elementwise(g, val(a), |g, x| g / x)),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                elementwise(g, val(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Square(a) => accumulate(grads, *a, elementwise(g, val(a), |g, x| 2.0 * g * x)),
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut ga = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let s = out.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = s.iter().zip(gr).map(|(s, g)| s * g).sum();
                    for j in 0..n {
                        ga[r * n + j] = s[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(out.shape().to_vec(), ga).expect("shape"));
            }
            Op::LogSoftmaxRows(a) => {
                let n = out.cols();
                let mut ga = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let ls = out.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        ga[r * n + j] = gr[j] - ls[j].exp() * gsum;
                    }
                }
                accumulate(grads, *a, Tensor::new(out.shape().to_vec(), ga).expect("shape"));
            }
            Op::LayerNormRows { x, inv_std } => {
                let n = out.cols();
                let nf = n as f64;
                let mut ga = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let gmean = gr.iter().sum::<f64>() / nf;
                    let gy = gr.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / nf;
                    for j in 0..n {
                        ga[r * n + j] = inv_std[r] * (gr[j] - gmean - y[j] * gy);
                    }
                }
                accumulate(grads, *x, Tensor::new(out.shape().to_vec(), ga).expect("shape"));
            }
            Op::Sum(a) => accumulate(grads, *a, Tensor::full(val(a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                accumulate(grads, *a, Tensor::full(val(a).shape(), g.item() / n));
            }
            Op::MeanRows(a) => {
                let ta = val(a);
                let m = ta.rows() as f64;
                let n = ta.cols();
                let data = (0..ta.len()).map(|k| g.data()[k % n] / m).collect();
                accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data).expect("shape"));
            }
            Op::Transpose(a) => {
                let gt = g.transpose().reshape(val(a).shape()).expect("shape");
                accumulate(grads, *a, gt);
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let tp = val(p);
                    let c = tp.cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    accumulate(grads, *p, Tensor::new(tp.shape().to_vec(), gp).expect("shape"));
                }
            }
            Op::SliceCols { x, start } => {
                let tx = val(x);
                let n = tx.cols();
                let len = out.cols();
                let mut gx = vec![0.0; tx.len()];
                for r in 0..tx.rows() {
                    gx[r * n + start..r * n + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), gx).expect("shape"));
            }
            Op::SelectRows { x, rows } => {
                let tx = val(x);
                let n = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        gx[r * n + j] += g.data()[k * n + j];
                    }
                }
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), gx).expect("shape"));
            }
            Op::RepeatRows(a) => {
                let gr = column_sums(g).reshape(val(a).shape()).expect("shape");
                accumulate(grads, *a, gr);
            }
            Op::Pick { x, index } => {
                let tx = val(x);
                let mut gx = vec![0.0; tx.len()];
                gx[*index] = g.item();
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), gx).expect("shape"));
            }
            Op::Reshape(a) => {
                let gr = g.clone().reshape(val(a).shape()).expect("shape");
                accumulate(grads, *a, gr);
            }
            Op::Sinusoidal { x, dim } => {
                let tx = val(x);
                let gx: Vec<f64> = tx
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let d = super::embed::sinusoidal_derivative(v, *dim);
                        let gs = &g.data()[k * dim..(k + 1) * dim];
                        d.iter().zip(gs).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), gx).expect("shape"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

fn column_sums(g: &Tensor) -> Tensor {
    let n = g.cols();
    let mut out = vec![0.0; n];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::row(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(3.0));
        let mut t = Tape::new();
        let xv = t.param(&p, x);
        let y = t.square(xv);
        t.backward(y, &mut p).unwrap();
        assert_eq!(p.grad(x).item(), 6.0);
    }

    #[test]
    fn relu_dead_region_has_zero_grad() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(-1.0));
        let mut t = Tape::new();
        let xv = t.param(&p, x);
        let y = t.relu(xv);
        let s = t.sum(y);
        t.backward(s, &mut p).unwrap();
        assert_eq!(p.grad(x).item(), 0.0);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(2.0));
        let unused = p.add("u", Tensor::full(&[2, 2], 1.0));
        p.accumulate_grad(unused, &Tensor::full(&[2, 2], 9.0));
        p.zero_grad();
        let mut t = Tape::new();
        let xv = t.param(&p, x);
        let _ = t.param(&p, unused);
        let y = t.exp(xv);
        t.backward(y, &mut p).unwrap();
        assert!(p.grad(unused).data().iter().all(|&g| g == 0.0));
        assert!((p.grad(x).item() - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut p = ParamSet::new();
        let mut t = Tape::new();
        let v = t.constant(Tensor::zeros(&[2, 2]));
        assert!(t.backward(v, &mut p).is_err());
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let a = t
            .constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 700.0]).unwrap());
        let s = t.softmax_rows(a);
        let v = t.value(s);
        for r in 0..2 {
            let sum: f64 = v.row_slice(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(v.row_slice(r).iter().all(|&x| x >= 0.0));
        }
    }
}
