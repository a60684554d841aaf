//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Operations record themselves in execution order; one backward traversal
//! visits each record exactly once, in reverse, accumulating exact gradients
//! into the leaves that asked for them. A tape is confined to a single thread
//! of execution; the tensors moving in and out of it are plain values.

use crate::conv::{
    add_channel_bias, channel_sums, conv_bwd_input_batch, conv_bwd_weight_batch, conv_fwd_batch,
    ConvGeometry, ConvShape,
};
use crate::error::{Error, Result};
use crate::gemm::{matmul, matmul_abt, transpose};
use crate::tensor::Tensor;

/// Handle to a tensor registered on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Batch normalization execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running first/second moments of a batch-norm layer. Lives outside the
/// tape because it persists across training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub batches_tracked: u64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            batches_tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct Node {
    value: Tensor,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Tensor>,
}

struct BnSaved {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

enum Record {
    Activation { kind: Activation, x: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Square { x: Var, out: Var },
    SumAll { x: Var, out: Var },
    MeanAll { x: Var, out: Var },
    Linear { x: Var, w: Var, b: Var, out: Var },
    Conv2d { x: Var, w: Var, b: Var, shape: ConvShape, out: Var },
    ConvTranspose2d { x: Var, w: Var, b: Var, shape: ConvShape, out: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: BnSaved, out: Var },
    GlobalAvgPool { x: Var, out: Var },
    ConcatChannels { a: Var, b: Var, out: Var },
    BroadcastChannels { e: Var, hw: (usize, usize), out: Var },
    MseLoss { pred: Var, target: Tensor, out: Var },
}

/// Ordered record of executed operations plus the tensors they touched.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register an input tensor. Only leaves with `requires_grad` receive a
    /// gradient buffer after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss w.r.t. a `requires_grad` leaf, after `backward`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, needs_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], make: impl FnOnce(Var) -> Record) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let out = self.push(value, false, needs);
        if needs {
            self.records.push(make(out));
        }
        out
    }

    // ---- elementwise ----

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let data = self.nodes[x.0].value.data();
        let out: Vec<f64> = match kind {
            Activation::Relu => data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Sigmoid => data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        let shape = self.nodes[x.0].value.shape().to_vec();
        let t = Tensor::from_vec_unchecked(shape, out);
        self.push_op(t, &[x], |out| Record::Activation { kind, x, out })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                context: "Tape::add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        Ok(self.push_op(t, &[a, b], |out| Record::Add { a, b, out }))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v * v).collect();
        let t = Tensor::from_vec_unchecked(tx.shape().to_vec(), data);
        self.push_op(t, &[x], |out| Record::Square { x, out })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push_op(Tensor::scalar(s), &[x], |out| Record::SumAll { x, out })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Tensor::scalar(s), &[x], |out| Record::MeanAll { x, out })
    }

    // ---- dense / conv layers ----

    /// `out[b, j] = sum_k w[j, k] * x[b, k] + bias[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, n) = self.nodes[x.0].value.dims2("Tape::linear input")?;
        let (m, wn) = self.nodes[w.0].value.dims2("Tape::linear weight")?;
        let bias = &self.nodes[b.0].value;
        if wn != n || bias.len() != m {
            return Err(Error::ShapeMismatch {
                context: "Tape::linear",
                left: vec![batch, n],
                right: vec![m, wn],
            });
        }
        let mut y = vec![0.0; batch * m];
        matmul_abt(batch, n, m, self.nodes[x.0].value.data(), self.nodes[w.0].value.data(), &mut y);
        for row in y.chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(bias.data()) {
                *v += bv;
            }
        }
        let t = Tensor::from_vec(vec![batch, m], y)
            .map_err(|_| Error::NonFinite { context: "Tape::linear" })?;
        Ok(self.push_op(t, &[x, w, b], |out| Record::Linear { x, w, b, out }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (batch, cin, h, wd) = self.nodes[x.0].value.dims4("Tape::conv2d input")?;
        let ws = self.nodes[w.0].value.shape();
        let (cout, wcin, kh, kw) = match *ws {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::RankMismatch {
                    context: "Tape::conv2d weight",
                    expected: 4,
                    got: ws.to_vec(),
                })
            }
        };
        if wcin != cin || (kh, kw) != geom.kernel || self.nodes[b.0].value.len() != cout {
            return Err(Error::ShapeMismatch {
                context: "Tape::conv2d",
                left: vec![batch, cin, h, wd],
                right: ws.to_vec(),
            });
        }
        let (oh, ow) = geom.out_extent((h, wd))?;
        let shape = ConvShape { cin, h, w: wd, cout, oh, ow, g: geom };
        let mut y = vec![0.0; batch * shape.out_len()];
        conv_fwd_batch(
            batch,
            &shape,
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            Some(self.nodes[b.0].value.data()),
            &mut y,
        );
        let t = Tensor::from_vec(vec![batch, cout, oh, ow], y)
            .map_err(|_| Error::NonFinite { context: "Tape::conv2d" })?;
        Ok(self.push_op(t, &[x, w, b], |out| Record::Conv2d { x, w, b, shape, out }))
    }

    /// Exact adjoint of [`Tape::conv2d`] for the same geometry. Weight layout
    /// is `[c_in, c_out, kh, kw]`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (batch, cin, h, wd) = self.nodes[x.0].value.dims4("Tape::conv2d_transpose input")?;
        let ws = self.nodes[w.0].value.shape();
        let (wcin, cout, kh, kw) = match *ws {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::RankMismatch {
                    context: "Tape::conv2d_transpose weight",
                    expected: 4,
                    got: ws.to_vec(),
                })
            }
        };
        if wcin != cin || (kh, kw) != geom.kernel || self.nodes[b.0].value.len() != cout {
            return Err(Error::ShapeMismatch {
                context: "Tape::conv2d_transpose",
                left: vec![batch, cin, h, wd],
                right: ws.to_vec(),
            });
        }
        let (oh, ow) = geom.out_extent_transposed((h, wd))?;
        // The underlying forward convolution maps output-sized images back to
        // input-sized ones; this op is its adjoint.
        let shape = ConvShape { cin: cout, h: oh, w: ow, cout: cin, oh: h, ow: wd, g: geom };
        let mut y = vec![0.0; batch * shape.in_len()];
        conv_bwd_input_batch(
            batch,
            &shape,
            self.nodes[w.0].value.data(),
            self.nodes[x.0].value.data(),
            &mut y,
        );
        add_channel_bias(batch, cout, oh * ow, &mut y, self.nodes[b.0].value.data());
        let t = Tensor::from_vec(vec![batch, cout, oh, ow], y)
            .map_err(|_| Error::NonFinite { context: "Tape::conv2d_transpose" })?;
        Ok(self.push_op(t, &[x, w, b], |out| Record::ConvTranspose2d { x, w, b, shape, out }))
    }

    /// Per-channel batch normalization over `(batch, height, width)` with
    /// epsilon 1e-5. Train mode updates `state` running moments (momentum
    /// 0.1, unbiased variance); eval mode reads them.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: BnMode,
    ) -> Result<Var> {
        let (batch, c, h, w) = self.nodes[x.0].value.dims4("Tape::batchnorm2d input")?;
        if self.nodes[gamma.0].value.len() != c
            || self.nodes[beta.0].value.len() != c
            || state.channels() != c
        {
            return Err(Error::ShapeMismatch {
                context: "Tape::batchnorm2d",
                left: vec![batch, c, h, w],
                right: self.nodes[gamma.0].value.shape().to_vec(),
            });
        }
        let hw = h * w;
        let per_channel = batch * hw;
        let (mean, inv_std) = match mode {
            BnMode::Train => {
                if per_channel < 2 {
                    return Err(Error::DegenerateBatch { per_channel });
                }
                let data = self.nodes[x.0].value.data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for b in 0..batch {
                        sum += data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    mean[ch] = sum / per_channel as f64;
                    let mut sq = 0.0;
                    for b in 0..batch {
                        for &v in &data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            let d = v - mean[ch];
                            sq += d * d;
                        }
                    }
                    var[ch] = sq / per_channel as f64;
                }
                let unbias = per_channel as f64 / (per_channel as f64 - 1.0);
                for ch in 0..c {
                    state.running_mean[ch] =
                        (1.0 - BN_MOMENTUM) * state.running_mean[ch] + BN_MOMENTUM * mean[ch];
                    state.running_var[ch] =
                        (1.0 - BN_MOMENTUM) * state.running_var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
                state.batches_tracked += 1;
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                (mean, inv_std)
            }
            BnMode::Eval => {
                if state.batches_tracked == 0 {
                    return Err(Error::UninitializedRunningStats);
                }
                let inv_std: Vec<f64> =
                    state.running_var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                (state.running_mean.clone(), inv_std)
            }
        };
        let data = self.nodes[x.0].value.data();
        let gamma_d = self.nodes[gamma.0].value.data();
        let beta_d = self.nodes[beta.0].value.data();
        let mut out = vec![0.0; data.len()];
        for b in 0..batch {
            for ch in 0..c {
                let (m, i, g, be) = (mean[ch], inv_std[ch], gamma_d[ch], beta_d[ch]);
                let src = &data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = g * ((v - m) * i) + be;
                }
            }
        }
        let t = Tensor::from_vec(vec![batch, c, h, w], out)
            .map_err(|_| Error::NonFinite { context: "Tape::batchnorm2d" })?;
        let saved = BnSaved { mean, inv_std, train: mode == BnMode::Train };
        Ok(self.push_op(t, &[x, gamma, beta], |out| Record::BatchNorm {
            x,
            gamma,
            beta,
            saved,
            out,
        }))
    }

    /// Per-channel spatial mean: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (batch, c, h, w) = self.nodes[x.0].value.dims4("Tape::global_avg_pool input")?;
        let hw = h * w;
        let data = self.nodes[x.0].value.data();
        let mut out = vec![0.0; batch * c];
        for b in 0..batch {
            for ch in 0..c {
                out[b * c + ch] =
                    data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>() / hw as f64;
            }
        }
        let t = Tensor::from_vec_unchecked(vec![batch, c], out);
        Ok(self.push_op(t, &[x], |out| Record::GlobalAvgPool { x, out }))
    }

    /// Channels of `a` followed by channels of `b`; batch and spatial extents
    /// must match.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.nodes[a.0].value.dims4("Tape::concat_channels lhs")?;
        let (bb, cb, hb, wb) = self.nodes[b.0].value.dims4("Tape::concat_channels rhs")?;
        if ba != bb || ha != hb || wa != wb {
            return Err(Error::ShapeMismatch {
                context: "Tape::concat_channels",
                left: vec![ba, ca, ha, wa],
                right: vec![bb, cb, hb, wb],
            });
        }
        let hw = ha * wa;
        let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * hw);
        for bi in 0..ba {
            out.extend_from_slice(&da[bi * ca * hw..(bi + 1) * ca * hw]);
            out.extend_from_slice(&db[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let t = Tensor::from_vec_unchecked(vec![ba, ca + cb, ha, wa], out);
        Ok(self.push_op(t, &[a, b], |out| Record::ConcatChannels { a, b, out }))
    }

    /// Broadcast `[B, C]` over the spatial extent: `out[b, c, y, x] = e[b, c]`.
    pub fn broadcast_channels(&mut self, e: Var, h: usize, w: usize) -> Result<Var> {
        let (batch, c) = self.nodes[e.0].value.dims2("Tape::broadcast_channels input")?;
        let data = self.nodes[e.0].value.data();
        let hw = h * w;
        let mut out = vec![0.0; batch * c * hw];
        for b in 0..batch {
            for ch in 0..c {
                out[(b * c + ch) * hw..(b * c + ch + 1) * hw].fill(data[b * c + ch]);
            }
        }
        let t = Tensor::from_vec_unchecked(vec![batch, c, h, w], out);
        Ok(self.push_op(t, &[e], |out| Record::BroadcastChannels { e, hw: (h, w), out }))
    }

    /// Mean squared error of a prediction against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let tp = &self.nodes[pred.0].value;
        if !tp.same_shape(target) {
            return Err(Error::ShapeMismatch {
                context: "Tape::mse_loss",
                left: tp.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        if tp.is_empty() {
            return Err(Error::EmptyInput { context: "Tape::mse_loss" });
        }
        let n = tp.len() as f64;
        let s: f64 = tp.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let t = Tensor::scalar(s / n);
        let target = target.clone();
        Ok(self.push_op(t, &[pred], |out| Record::MseLoss { pred, target, out }))
    }

    // ---- backward ----

    /// Reverse traversal from a scalar loss. Populates gradients on every
    /// `requires_grad` leaf (zeros for leaves the loss does not depend on),
    /// then marks the tape consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::NotScalar { context: "Tape::backward", shape: lt.shape().to_vec() });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for rec in self.records.iter().rev() {
            self.apply_backward(rec, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.grad = Some(Tensor::from_vec_unchecked(node.value.shape().to_vec(), g));
            }
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, add: impl FnOnce(&mut [f64])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        add(slot);
    }

    /// Hand a freshly computed gradient buffer to a node: moved in when the
    /// slot is empty, elementwise-added otherwise.
    fn give(grads: &mut [Option<Vec<f64>>], v: Var, buf: Vec<f64>) {
        match &mut grads[v.0] {
            Some(slot) => {
                for (gi, vv) in slot.iter_mut().zip(&buf) {
                    *gi += vv;
                }
            }
            slot @ None => *slot = Some(buf),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn apply_backward(&self, rec: &Record, grads: &mut Vec<Option<Vec<f64>>>) {
        match rec {
            Record::Activation { kind, x, out } => {
                let Some(mut dy) = grads[out.0].take() else { return };
                if self.needs(*x) {
                    match kind {
                        Activation::Relu => {
                            // Subgradient at 0 is defined as 0.
                            let xv = self.nodes[x.0].value.data();
                            for (d, &v) in dy.iter_mut().zip(xv) {
                                if v <= 0.0 {
                                    *d = 0.0;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            let yv = self.nodes[out.0].value.data();
                            for (d, &y) in dy.iter_mut().zip(yv) {
                                *d *= y * (1.0 - y);
                            }
                        }
                    }
                    Self::give(grads, *x, dy);
                }
            }
            Record::Add { a, b, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let n = dy.len();
                if self.needs(*a) && self.needs(*b) {
                    Self::accumulate(grads, *a, n, |g| {
                        for i in 0..n {
                            g[i] += dy[i];
                        }
                    });
                    Self::give(grads, *b, dy);
                } else if self.needs(*a) {
                    Self::give(grads, *a, dy);
                } else if self.needs(*b) {
                    Self::give(grads, *b, dy);
                }
            }
            Record::Square { x, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let n = xv.len();
                    Self::accumulate(grads, *x, n, |g| {
                        for i in 0..n {
                            g[i] += 2.0 * xv[i] * dy[i];
                        }
                    });
                }
            }
            Record::SumAll { x, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*x) {
                    let n = self.nodes[x.0].value.len();
                    Self::accumulate(grads, *x, n, |g| {
                        for gi in g.iter_mut() {
                            *gi += dy[0];
                        }
                    });
                }
            }
            Record::MeanAll { x, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*x) {
                    let n = self.nodes[x.0].value.len();
                    let scale = dy[0] / n as f64;
                    Self::accumulate(grads, *x, n, |g| {
                        for gi in g.iter_mut() {
                            *gi += scale;
                        }
                    });
                }
            }
            Record::Linear { x, w, b, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let (batch, n) = self.nodes[x.0].value.dims2("linear backward").unwrap();
                let m = self.nodes[b.0].value.len();
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.data();
                    Self::accumulate(grads, *x, batch * n, |g| {
                        matmul(batch, m, n, &dy, wv, g);
                    });
                }
                if self.needs(*w) {
                    let xv = self.nodes[x.0].value.data();
                    let dyt = transpose(batch, m, &dy);
                    Self::accumulate(grads, *w, m * n, |g| {
                        matmul(m, batch, n, &dyt, xv, g);
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, m, |g| {
                        for row in dy.chunks(m) {
                            for (gi, v) in g.iter_mut().zip(row) {
                                *gi += v;
                            }
                        }
                    });
                }
            }
            Record::Conv2d { x, w, b, shape, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let batch = self.nodes[x.0].value.shape()[0];
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.data();
                    let mut dx = vec![0.0; batch * shape.in_len()];
                    conv_bwd_input_batch(batch, shape, wv, &dy, &mut dx);
                    Self::give(grads, *x, dx);
                }
                if self.needs(*w) || self.needs(*b) {
                    let xv = self.nodes[x.0].value.data();
                    let mut dw = vec![0.0; self.nodes[w.0].value.len()];
                    let mut db = vec![0.0; self.nodes[b.0].value.len()];
                    conv_bwd_weight_batch(batch, shape, xv, &dy, &mut dw, Some(&mut db));
                    if self.needs(*w) {
                        Self::give(grads, *w, dw);
                    }
                    if self.needs(*b) {
                        Self::give(grads, *b, db);
                    }
                }
            }
            Record::ConvTranspose2d { x, w, b, shape, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let batch = self.nodes[x.0].value.shape()[0];
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.data();
                    let mut dx = vec![0.0; batch * shape.out_len()];
                    conv_fwd_batch(batch, shape, &dy, wv, None, &mut dx);
                    Self::give(grads, *x, dx);
                }
                if self.needs(*w) {
                    let xv = self.nodes[x.0].value.data();
                    let mut dw = vec![0.0; self.nodes[w.0].value.len()];
                    conv_bwd_weight_batch(batch, shape, &dy, xv, &mut dw, None);
                    Self::give(grads, *w, dw);
                }
                if self.needs(*b) {
                    // Transposed-conv output channels live in `shape.cin`.
                    let c = shape.cin;
                    let hw = shape.h * shape.w;
                    let mut db = vec![0.0; c];
                    channel_sums(batch, c, hw, &dy, &mut db);
                    Self::give(grads, *b, db);
                }
            }
            Record::BatchNorm { x, gamma, beta, saved, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let (batch, c, h, w) = self.nodes[x.0].value.dims4("batchnorm backward").unwrap();
                let hw = h * w;
                let n = (batch * hw) as f64;
                let xv = self.nodes[x.0].value.data();
                let gv = self.nodes[gamma.0].value.data();
                // Per-channel reductions shared by all three gradients.
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xh = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let (m, inv) = (saved.mean[ch], saved.inv_std[ch]);
                        for i in 0..hw {
                            let xh = (xv[base + i] - m) * inv;
                            sum_dy[ch] += dy[base + i];
                            sum_dy_xh[ch] += dy[base + i] * xh;
                        }
                    }
                }
                if self.needs(*x) {
                    Self::accumulate(grads, *x, xv.len(), |g| {
                        for b in 0..batch {
                            for ch in 0..c {
                                let base = (b * c + ch) * hw;
                                let (m, inv, ga) = (saved.mean[ch], saved.inv_std[ch], gv[ch]);
                                if saved.train {
                                    let (sd, sdx) = (sum_dy[ch], sum_dy_xh[ch]);
                                    for i in 0..hw {
                                        let xh = (xv[base + i] - m) * inv;
                                        g[base + i] +=
                                            ga * inv * (dy[base + i] - sd / n - xh * sdx / n);
                                    }
                                } else {
                                    for i in 0..hw {
                                        g[base + i] += ga * inv * dy[base + i];
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*gamma) {
                    Self::accumulate(grads, *gamma, c, |g| {
                        for (gi, v) in g.iter_mut().zip(&sum_dy_xh) {
                            *gi += v;
                        }
                    });
                }
                if self.needs(*beta) {
                    Self::accumulate(grads, *beta, c, |g| {
                        for (gi, v) in g.iter_mut().zip(&sum_dy) {
                            *gi += v;
                        }
                    });
                }
            }
            Record::GlobalAvgPool { x, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*x) {
                    let (batch, c, h, w) = self.nodes[x.0].value.dims4("gap backward").unwrap();
                    let hw = h * w;
                    let scale = 1.0 / hw as f64;
                    Self::accumulate(grads, *x, batch * c * hw, |g| {
                        for b in 0..batch {
                            for ch in 0..c {
                                let d = dy[b * c + ch] * scale;
                                for gi in &mut g[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                                    *gi += d;
                                }
                            }
                        }
                    });
                }
            }
            Record::ConcatChannels { a, b, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                let (batch, ca, h, w) = self.nodes[a.0].value.dims4("concat backward").unwrap();
                let cb = self.nodes[b.0].value.shape()[1];
                let hw = h * w;
                let ct = ca + cb;
                if self.needs(*a) {
                    Self::accumulate(grads, *a, batch * ca * hw, |g| {
                        for bi in 0..batch {
                            let src = &dy[bi * ct * hw..bi * ct * hw + ca * hw];
                            let dst = &mut g[bi * ca * hw..(bi + 1) * ca * hw];
                            for (gi, v) in dst.iter_mut().zip(src) {
                                *gi += v;
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, batch * cb * hw, |g| {
                        for bi in 0..batch {
                            let src = &dy[bi * ct * hw + ca * hw..(bi + 1) * ct * hw];
                            let dst = &mut g[bi * cb * hw..(bi + 1) * cb * hw];
                            for (gi, v) in dst.iter_mut().zip(src) {
                                *gi += v;
                            }
                        }
                    });
                }
            }
            Record::BroadcastChannels { e, hw, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*e) {
                    let (batch, c) = self.nodes[e.0].value.dims2("broadcast backward").unwrap();
                    let spatial = hw.0 * hw.1;
                    Self::accumulate(grads, *e, batch * c, |g| {
                        for b in 0..batch {
                            for ch in 0..c {
                                g[b * c + ch] += dy
                                    [(b * c + ch) * spatial..(b * c + ch + 1) * spatial]
                                    .iter()
                                    .sum::<f64>();
                            }
                        }
                    });
                }
            }
            Record::MseLoss { pred, target, out } => {
                let Some(dy) = grads[out.0].take() else { return };
                if self.needs(*pred) {
                    let pv = self.nodes[pred.0].value.data();
                    let tv = target.data();
                    let n = pv.len();
                    let scale = 2.0 * dy[0] / n as f64;
                    Self::accumulate(grads, *pred, n, |g| {
                        for i in 0..n {
                            g[i] += scale * (pv[i] - tv[i]);
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(image(vec![3], vec![-2.5, 0.0, 3.0]), false);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[1], 0.5);
        // sigmoid(ln 3) = 3/4 in closed form.
        let x3 = tape.leaf(Tensor::scalar(3f64.ln()), false);
        let s3 = tape.sigmoid(x3);
        assert!((tape.value(s3).data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        // Hand arithmetic: [1,2] * [[3,4]]^T + [5] = [16].
        let x = tape.leaf(image(vec![1, 2], vec![1.0, 2.0]), false);
        let w = tape.leaf(image(vec![1, 2], vec![3.0, 4.0]), false);
        let b = tape.leaf(image(vec![1], vec![5.0]), false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[16.0]);

        // Identity weight, zero bias: output equals input.
        let x = tape.leaf(image(vec![2, 2], vec![0.5, -1.0, 2.0, 4.0]), false);
        let eye = tape.leaf(image(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]), false);
        let zero = tape.leaf(Tensor::zeros(vec![2]), false);
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        // Zero weight: every row is the bias.
        let wz = tape.leaf(Tensor::zeros(vec![2, 2]), false);
        let bb = tape.leaf(image(vec![2], vec![7.0, -3.0]), false);
        let y = tape.linear(x, wz, bb).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, -3.0, 7.0, -3.0]);

        // Inner-dimension mismatch is rejected.
        let w_bad = tape.leaf(Tensor::zeros(vec![2, 3]), false);
        assert!(tape.linear(x, w_bad, zero).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 2 * 2 * 2).map(|i| (i as f64 * 1.3).sin() * 8.0 + 0.5).collect();
        let x = tape.leaf(image(vec![2, 2, 2, 2], data), false);
        let gamma = tape.leaf(Tensor::full(vec![2], 1.0), false);
        let beta = tape.leaf(Tensor::zeros(vec![2]), false);
        let mut state = BatchNormState::new(2);
        let y = tape.batchnorm2d(x, gamma, beta, &mut state, BnMode::Train).unwrap();
        let out = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| out[(b * 2 + ch) * 4..(b * 2 + ch + 1) * 4].to_vec())
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {ch} variance {var}");
        }
        assert_eq!(state.batches_tracked, 1);
    }

    #[test]
    fn batchnorm_constant_channel_and_affine_collapse() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 1, 2, 2], 9.0), false);
        let gamma = tape.leaf(Tensor::full(vec![1], 1.0), false);
        let beta = tape.leaf(Tensor::zeros(vec![1]), false);
        let mut state = BatchNormState::new(1);
        // Constant input: the epsilon floor keeps the output finite zero.
        let y = tape.batchnorm2d(x, gamma, beta, &mut state, BnMode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        // gamma = 0, beta = 3 collapses to the constant 3.
        let g0 = tape.leaf(Tensor::zeros(vec![1]), false);
        let b3 = tape.leaf(Tensor::full(vec![1], 3.0), false);
        let y = tape.batchnorm2d(x, g0, b3, &mut state, BnMode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn batchnorm_error_surfaces() {
        let mut tape = Tape::new();
        let x1 = tape.leaf(Tensor::full(vec![1, 2, 1, 1], 1.0), false);
        let gamma = tape.leaf(Tensor::full(vec![2], 1.0), false);
        let beta = tape.leaf(Tensor::zeros(vec![2]), false);
        let mut state = BatchNormState::new(2);
        // One value per channel: variance undefined in train mode.
        assert!(matches!(
            tape.batchnorm2d(x1, gamma, beta, &mut state, BnMode::Train),
            Err(Error::DegenerateBatch { per_channel: 1 })
        ));
        // Eval before any train pass.
        assert!(matches!(
            tape.batchnorm2d(x1, gamma, beta, &mut state, BnMode::Eval),
            Err(Error::UninitializedRunningStats)
        ));
    }

    #[test]
    fn global_avg_pool_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(image(vec![1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]), false);
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5, 7.0]);
        // Single-pixel map: the pixel itself.
        let x1 = tape.leaf(image(vec![1, 1, 1, 1], vec![0.31]), false);
        let p1 = tape.global_avg_pool(x1).unwrap();
        assert_eq!(tape.value(p1).data(), &[0.31]);
    }

    #[test]
    fn concat_slices_recover_originals() {
        let mut tape = Tape::new();
        let a_t = image(vec![2, 1, 2, 2], (0..8).map(|i| i as f64).collect());
        let b_t = image(vec![2, 1, 2, 2], (0..8).map(|i| 10.0 + i as f64).collect());
        let a = tape.leaf(a_t.clone(), false);
        let b = tape.leaf(b_t.clone(), false);
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2, 2, 2]);
        let data = tape.value(c).data();
        // Per batch element: channels of a, then channels of b.
        assert_eq!(&data[0..4], &a_t.data()[0..4]);
        assert_eq!(&data[4..8], &b_t.data()[0..4]);
        assert_eq!(&data[8..12], &a_t.data()[4..8]);
        assert_eq!(&data[12..16], &b_t.data()[4..8]);
        // Bottleneck-scale shape arithmetic.
        let wide_a = tape.leaf(Tensor::zeros(vec![2, 512, 12, 12]), false);
        let wide_b = tape.leaf(Tensor::zeros(vec![2, 512, 12, 12]), false);
        let wide = tape.concat_channels(wide_a, wide_b).unwrap();
        assert_eq!(tape.value(wide).shape(), &[2, 1024, 12, 12]);
        // Spatial mismatch is rejected.
        let small = tape.leaf(Tensor::zeros(vec![2, 1, 3, 3]), false);
        assert!(tape.concat_channels(a, small).is_err());
    }

    #[test]
    fn mse_loss_values() {
        let mut tape = Tape::new();
        let pd = tape.leaf(image(vec![2], vec![1.0, 1.0]), false);
        let loss = tape.mse_loss(pd, &image(vec![2], vec![0.0, 2.0])).unwrap();
        assert_eq!(tape.value(loss).data(), &[1.0]);
        let zero = tape.mse_loss(pd, &image(vec![2], vec![1.0, 1.0])).unwrap();
        assert_eq!(tape.value(zero).data(), &[0.0]);
        assert!(tape.mse_loss(pd, &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn single_hidden_unit_relu_path() {
        // One hidden unit, all weights 1, biases 0, input [2, 0, 0]:
        // relu(2) = 2 flows straight through to the output.
        let mut tape = Tape::new();
        let x = tape.leaf(image(vec![1, 3], vec![2.0, 0.0, 0.0]), false);
        let w1 = tape.leaf(Tensor::full(vec![1, 3], 1.0), false);
        let b1 = tape.leaf(Tensor::zeros(vec![1]), false);
        let h = tape.linear(x, w1, b1).unwrap();
        let h = tape.relu(h);
        let w2 = tape.leaf(Tensor::full(vec![1, 1], 1.0), false);
        let b2 = tape.leaf(Tensor::zeros(vec![1]), false);
        let y = tape.linear(h, w2, b2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
    }
}
