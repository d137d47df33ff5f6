//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Every op appends a node holding its forward value; `backward` sweeps the
//! tape in reverse (which is a valid reverse topological order since parents
//! always precede children) and accumulates gradients by addition.

use crate::error::{Error, Result};
use crate::tensor::conv::{self, ConvSpec};
use crate::tensor::norm::{self, BatchNormCache};
use crate::tensor::pool;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Opaque parameter key used to route gradients back to a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaxPool {
        x: Var,
        indices: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    GlobalAvgPool(Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Reshape(Var),
    Add(Var, Var),
    Concat(Var, Var),
    ChannelScale {
        x: Var,
        gate: Var,
    },
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
    Bce {
        p: Var,
        target: Tensor,
    },
    Dice {
        p: Var,
        target: Tensor,
        smooth: f64,
    },
}

/// One recorded value with its provenance.
#[derive(Debug)]
pub struct GradNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

impl GradNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<GradNode>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`; exact zeros when it did not participate.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    /// Gradients of every trainable parameter leaf, summed when one
    /// parameter was fed into the tape more than once.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for &(id, var) in &self.params {
            let g = self.wrt(var);
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.add_assign(&g).expect("parameter shapes agree"),
                None => out.push((id, g)),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn node(&self, var: Var) -> &GradNode {
        &self.nodes[var.0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(GradNode {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn finite(value: Tensor, what: &str) -> Result<Tensor> {
        if value.all_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!("{what} produced a non-finite value")))
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Param(id), trainable)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv::conv2d_transpose(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let (out, indices) = pool::max_pool2d(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool { x, indices }, rg))
    }

    /// Batch normalization using batch statistics. Returns the output and the
    /// `(mean, unbiased variance)` batch statistics for the running update.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (out, cache, mean, var) =
            norm::batch_norm_train(self.value(x), self.value(gamma), self.value(beta))?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats: true,
            },
            rg,
        );
        Ok((v, mean, var))
    }

    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, running_mean: &Tensor, running_var: &Tensor) -> Result<Var> {
        let (out, cache) = norm::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats: false,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax over axis 1 (the class/channel axis).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax_axis1(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = pool::global_avg_pool(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// `x [N, in] * w[out, in]^T + b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if fin != win {
            return Err(Error::ChannelMismatch { expected: win, got: fin });
        }
        let mut out = Tensor::zeros([n, fout]);
        conv::gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, 0.0, out.data_mut());
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != fout {
                return Err(Error::shape(format!("dense bias length {} != {fout}", bias.len())));
            }
            for row in out.data_mut().chunks_mut(fout) {
                for (o, bv) in row.iter_mut().zip(bias.data()) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.shape()[0];
        let out = v.reshape([n, v.len() / n])?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Concatenation of two `[N, C, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for s in 0..na {
            data.extend_from_slice(&self.value(a).data()[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let out = Tensor::new([na, ca + cb, ha, wa], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// `x [N, C, H, W] * gate [N, C]` broadcast over space.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gate).shape() != [n, c] {
            return Err(Error::shape(format!(
                "gate shape {:?} does not match [{n}, {c}]",
                self.value(gate).shape()
            )));
        }
        let plane = h * w;
        let mut out = self.value(x).clone();
        for (chunk, &g) in out.data_mut().chunks_mut(plane).zip(self.value(gate).data()) {
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        let rg = self.rg(&[x, gate]);
        Ok(self.push(out, Op::ChannelScale { x, gate }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).scale(factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// `sum(x * weights)` with constant weights; used to project tensors to
    /// scalars in gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).dot(&weights)?);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::WeightedSum { x, weights }, rg))
    }

    /// Mean binary cross-entropy with probabilities clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        let probs = self.value(p);
        probs.expect_same_shape(target)?;
        let total: f64 = probs
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum();
        let out = Self::finite(Tensor::scalar(total / probs.len() as f64), "bce loss")?;
        let rg = self.rg(&[p]);
        Ok(self.push(
            out,
            Op::Bce {
                p,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// `1 - (2 * sum(p * g) + smooth) / (sum(p) + sum(g) + smooth)`.
    pub fn dice(&mut self, p: Var, target: &Tensor, smooth: f64) -> Result<Var> {
        let probs = self.value(p);
        probs.expect_same_shape(target)?;
        let (inter, sp, sg) = dice_sums(probs.data(), target.data());
        let out = Self::finite(
            Tensor::scalar(1.0 - (2.0 * inter + smooth) / (sp + sg + smooth)),
            "dice loss",
        )?;
        let rg = self.rg(&[p]);
        Ok(self.push(
            out,
            Op::Dice {
                p,
                target: target.clone(),
                smooth,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) if n.requires_grad => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            params,
            shapes,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
        if !self.nodes[var.0].requires_grad {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &GradNode, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, spec } => {
                let want = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), spec, g, want)?;
                if let Some(t) = cg.input {
                    self.accumulate(grads, *x, t)?;
                }
                if let Some(t) = cg.weight {
                    self.accumulate(grads, *w, t)?;
                }
                if let (Some(b), Some(t)) = (b, cg.bias) {
                    self.accumulate(grads, *b, t)?;
                }
            }
            Op::ConvTranspose2d { x, w, b } => {
                let want = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let cg = conv::conv2d_transpose_backward(self.value(*x), self.value(*w), g, want)?;
                if let Some(t) = cg.input {
                    self.accumulate(grads, *x, t)?;
                }
                if let Some(t) = cg.weight {
                    self.accumulate(grads, *w, t)?;
                }
                if let (Some(b), Some(t)) = (b, cg.bias) {
                    self.accumulate(grads, *b, t)?;
                }
            }
            Op::MaxPool { x, indices } => {
                let gx = pool::max_pool2d_backward(self.value(*x).shape(), indices, g);
                self.accumulate(grads, *x, gx)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats,
            } => {
                let (gx, gg, gb) = norm::batch_norm_backward(cache, self.value(*gamma), g, *batch_stats)?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *gamma, gg)?;
                self.accumulate(grads, *beta, gb)?;
            }
            Op::Relu(x) => {
                let gx = self.value(*x).zip_map(g, |v, d| if v > 0.0 { d } else { 0.0 })?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Sigmoid(x) => {
                let gx = node.value.zip_map(g, |s, d| d * s * (1.0 - s))?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (outer, classes, inner) = axis1_layout(y)?;
                let mut gx = Tensor::zeros(y.shape().to_vec());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |c: usize| (o * classes + c) * inner + i;
                        let dot: f64 = (0..classes).map(|c| y.data()[idx(c)] * g.data()[idx(c)]).sum();
                        for c in 0..classes {
                            gx.data_mut()[idx(c)] = y.data()[idx(c)] * (g.data()[idx(c)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape().to_vec();
                let plane = shape[2] * shape[3];
                let mut gx = Tensor::zeros(shape);
                for (chunk, &d) in gx.data_mut().chunks_mut(plane).zip(g.data()) {
                    chunk.fill(d / plane as f64);
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Dense { x, w, b } => {
                let (n, fin) = self.value(*x).dims2()?;
                let fout = g.shape()[1];
                if self.wants(*x) {
                    let mut gx = Tensor::zeros([n, fin]);
                    conv::gemm(n, fout, fin, g.data(), false, self.value(*w).data(), false, 0.0, gx.data_mut());
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*w) {
                    let mut gw = Tensor::zeros([fout, fin]);
                    conv::gemm(fout, n, fin, g.data(), true, self.value(*x).data(), false, 0.0, gw.data_mut());
                    self.accumulate(grads, *w, gw)?;
                }
                if let Some(b) = b {
                    let mut gb = Tensor::zeros([fout]);
                    for row in g.data().chunks(fout) {
                        for (o, d) in gb.data_mut().iter_mut().zip(row) {
                            *o += d;
                        }
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Reshape(x) => {
                let gx = g.reshape(self.value(*x).shape().to_vec())?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4()?;
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * (ca + cb) * plane;
                    ga.extend_from_slice(&g.data()[base..base + ca * plane]);
                    gb.extend_from_slice(&g.data()[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(grads, *a, Tensor::new([n, ca, h, w], ga)?)?;
                self.accumulate(grads, *b, Tensor::new([n, cb, h, w], gb)?)?;
            }
            Op::ChannelScale { x, gate } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4()?;
                let plane = h * w;
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for (chunk, &s) in gx.data_mut().chunks_mut(plane).zip(self.value(*gate).data()) {
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*gate) {
                    let data = xv
                        .data()
                        .chunks(plane)
                        .zip(g.data().chunks(plane))
                        .map(|(xs, ds)| xs.iter().zip(ds).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *gate, Tensor::new([n, c], data)?)?;
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.scale(*f))?,
            Op::Sum(x) => {
                let gx = Tensor::full(self.value(*x).shape().to_vec(), g.data()[0]);
                self.accumulate(grads, *x, gx)?;
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let gx = Tensor::full(v.shape().to_vec(), g.data()[0] / v.len() as f64);
                self.accumulate(grads, *x, gx)?;
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.scale(g.data()[0]))?;
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p);
                let m = pv.len() as f64;
                let d = g.data()[0];
                let gx = pv.zip_map(target, |p, y| {
                    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                        0.0
                    } else {
                        d * (-(y / p) + (1.0 - y) / (1.0 - p)) / m
                    }
                })?;
                self.accumulate(grads, *p, gx)?;
            }
            Op::Dice { p, target, smooth } => {
                let pv = self.value(*p);
                let (inter, sp, sg) = dice_sums(pv.data(), target.data());
                let num = 2.0 * inter + smooth;
                let den = sp + sg + smooth;
                let d = g.data()[0];
                let gx = target.map(|y| -d * (2.0 * y * den - num) / (den * den));
                self.accumulate(grads, *p, gx)?;
            }
        }
        Ok(())
    }
}

fn dice_sums(p: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for (&a, &b) in p.iter().zip(g) {
        inter += a * b;
        sp += a;
        sg += b;
    }
    (inter, sp, sg)
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn axis1_layout(t: &Tensor) -> Result<(usize, usize, usize)> {
    if t.ndim() < 2 {
        return Err(Error::shape(format!("softmax needs rank >= 2, got {:?}", t.shape())));
    }
    let s = t.shape();
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Numerically stable softmax over axis 1.
pub fn softmax_axis1(t: &Tensor) -> Result<Tensor> {
    let (outer, classes, inner) = axis1_layout(t)?;
    let mut out = Tensor::zeros(t.shape().to_vec());
    for o in 0..outer {
        for i in 0..inner {
            let idx = |c: usize| (o * classes + c) * inner + i;
            let max = (0..classes).map(|c| t.data()[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..classes {
                let e = (t.data()[idx(c)] - max).exp();
                out.data_mut()[idx(c)] = e;
                z += e;
            }
            for c in 0..classes {
                out.data_mut()[idx(c)] /= z;
            }
        }
    }
    Ok(out)
}
