use super::kernels::{self, ConvDims};
use super::pool;
use super::Tensor;
use crate::error::{Error, Result};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the batch-norm update.
pub const BN_MOMENTUM: f64 = 0.9;
/// Clamp inside the cross-entropy logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Dense {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    WeightedCce {
        probs: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    WeightedBce {
        probs: Var,
        targets: Vec<f64>,
        weights: [f64; 2],
    },
    Dot {
        x: Var,
        coeffs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order and replays them backwards.
///
/// A node requires a gradient when it is a leaf created with
/// `requires_grad` or when any of its inputs does; backward skips the
/// rest.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Adds `delta` into the gradient of `v`, moving it in when the buffer
/// does not exist yet.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => {
            g.iter_mut().zip(&delta).for_each(|(d, s)| *d += s);
            pool::recycle(delta);
        }
        empty => *empty = Some(delta),
    }
}

/// Gradient buffer of `v`, allocated as zeros on first use; `None` when
/// `v` does not take part in differentiation.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| pool::zeroed(n)))
}

impl Drop for Tape {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            if let Op::BatchNorm { xhat, .. } = node.op {
                pool::recycle(xhat);
            }
            pool::recycle(node.value.into_data());
        }
        for g in self.grads.drain(..).flatten() {
            pool::recycle(g);
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf from the last [`Tape::backward`], if any reached
    /// it. Intermediate gradients are released during the reverse pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// SAME-padded cross-correlation. For even kernels the extra zero goes
    /// on the right.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, c_in, len) = self.value(x).dims3("conv1d input")?;
        let (c_out, w_in, kernel) = self.value(w).dims3("conv1d weight")?;
        if w_in != c_in || kernel == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv1d: input has {c_in} channels, weight {:?}",
                self.value(w).shape()
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(Error::ShapeMismatch(format!(
                    "conv1d: bias {:?} for {c_out} outputs",
                    self.value(b).shape()
                )));
            }
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            len,
            kernel,
        };
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
        );
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor::new([batch, c_out, len], out)?,
            Op::Conv1d { x, w, bias },
            rg,
        ))
    }

    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (_, _, len) = self.value(x).dims3("maxpool1d input")?;
        if window == 0 {
            return Err(Error::ShapeMismatch("maxpool1d: zero window".into()));
        }
        let (out, argmax) = kernels::maxpool1d_forward(self.value(x).data(), len, window);
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool1d { x, argmax }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (batch, channels, len) = self.value(x).dims3("global_avg_pool input")?;
        if len == 0 {
            return Err(Error::ShapeMismatch(
                "global_avg_pool: empty length axis".into(),
            ));
        }
        let out = self
            .value(x)
            .data()
            .chunks_exact(len)
            .map(|row| row.iter().sum::<f64>() / len as f64)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new([batch, channels], out)?,
            Op::GlobalAvgPool { x },
            rg,
        ))
    }

    /// Per-channel normalization of a `[B, C, L]` activation. In training
    /// mode the batch statistics are returned so the caller can fold them
    /// into its running averages.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (batch, channels, len) = self.value(x).dims3("batchnorm1d input")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels] {
                return Err(Error::ShapeMismatch(format!(
                    "batchnorm1d: {name} {:?} for {channels} channels",
                    self.value(v).shape()
                )));
            }
        }
        let xs = self.value(x).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let (m, v) = kernels::channel_moments(xs, batch, channels, len);
                let stats = BatchStats {
                    mean: m.clone(),
                    var: v.clone(),
                };
                (m, v, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(Error::ShapeMismatch(
                        "batchnorm1d: running statistics".into(),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = pool::zeroed(xs.len());
        let mut out = pool::zeroed(xs.len());
        for (i, (row, (xh, o))) in xs
            .chunks_exact(len)
            .zip(xhat.chunks_exact_mut(len).zip(out.chunks_exact_mut(len)))
            .enumerate()
        {
            let c = i % channels;
            for ((xv, xh), o) in row.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *xh = (xv - mean[c]) * inv_std[c];
                *o = g[c] * *xh + bt[c];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: stats.is_some(),
        };
        Ok((
            self.push(Tensor::new([batch, channels, len], out)?, op, rg),
            stats,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = pool::collect(v.data().iter().map(|&a| a.max(0.0)));
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v
            .data()
            .iter()
            .map(|&a| {
                if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Sigmoid { x }, rg)
    }

    /// Softmax over the last axis of a `[B, K]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (batch, k) = self.value(x).dims2("softmax input")?;
        let mut out = Vec::with_capacity(batch * k);
        for row in self.value(x).data().chunks_exact(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / sum));
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new([batch, k], out)?, Op::Softmax { x }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = pool::collect(va.data().iter().zip(vb.data()).map(|(x, y)| x + y));
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    /// Concatenates `[B, C_i, L]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat_channels: no inputs".into()))?;
        let (batch, _, len) = self.value(*first).dims3("concat_channels input")?;
        let mut total = 0;
        for &p in parts {
            let (b, c, l) = self.value(p).dims3("concat_channels input")?;
            if b != batch || l != len {
                return Err(Error::ShapeMismatch(format!(
                    "concat_channels: {:?} vs batch {batch}, length {len}",
                    self.value(p).shape()
                )));
            }
            total += c;
        }
        let mut out = pool::zeroed(batch * total * len);
        out.clear();
        for b in 0..batch {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[b * c * len..(b + 1) * c * len]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new([batch, total, len], out)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// `x [B, F] · wᵀ + bias`, with `w` laid out `[out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, features) = self.value(x).dims2("dense input")?;
        let (outputs, w_in) = self.value(w).dims2("dense weight")?;
        if w_in != features {
            return Err(Error::ShapeMismatch(format!(
                "dense: input has {features} features, weight {:?}",
                self.value(w).shape()
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [outputs] {
                return Err(Error::ShapeMismatch("dense: bias shape".into()));
            }
        }
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        let mut out = Vec::with_capacity(batch * outputs);
        for row in xs.chunks_exact(features) {
            for (o, w_row) in ws.chunks_exact(features).enumerate() {
                let b = bias.map_or(0.0, |b| self.value(b).data()[o]);
                out.push(b + kernels::dot(row, w_row));
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor::new([batch, outputs], out)?,
            Op::Dense { x, w, bias },
            rg,
        ))
    }

    /// `−(1/B) Σ_b Σ_k w_k t_bk ln(p_bk + ε)` for probability rows `p`.
    pub fn weighted_cce(&mut self, probs: Var, targets: &Tensor, weights: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        let (batch, k) = p.dims2("weighted_cce probabilities")?;
        if targets.shape() != p.shape() || weights.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "weighted_cce: probs {:?}, targets {:?}, {} weights",
                p.shape(),
                targets.shape(),
                weights.len()
            )));
        }
        for (b, row) in p.data().chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0) {
                return Err(Error::NonDistribution(format!("row {b} sums to {sum}")));
            }
        }
        let mut loss = 0.0;
        for (row, t_row) in p.data().chunks_exact(k).zip(targets.data().chunks_exact(k)) {
            for ((pv, tv), w) in row.iter().zip(t_row).zip(weights) {
                if *tv != 0.0 {
                    loss -= w * tv * (pv + LOG_EPS).ln();
                }
            }
        }
        loss /= batch as f64;
        let rg = self.any_grad(&[probs]);
        let op = Op::WeightedCce {
            probs,
            targets: targets.data().to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Binary counterpart of [`Tape::weighted_cce`] for a `[B, 1]`
    /// positive-class probability; `weights` is `[negative, positive]`.
    pub fn weighted_bce(&mut self, probs: Var, targets: &[f64], weights: [f64; 2]) -> Result<Var> {
        let p = self.value(probs);
        let (batch, k) = p.dims2("weighted_bce probabilities")?;
        if k != 1 || targets.len() != batch {
            return Err(Error::ShapeMismatch(format!(
                "weighted_bce: probs {:?}, {} targets",
                p.shape(),
                targets.len()
            )));
        }
        if let Some(bad) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::NonDistribution(format!("probability {bad}")));
        }
        let loss = p
            .data()
            .iter()
            .zip(targets)
            .map(|(pv, t)| {
                -(weights[1] * t * (pv + LOG_EPS).ln()
                    + weights[0] * (1.0 - t) * (1.0 - pv + LOG_EPS).ln())
            })
            .sum::<f64>()
            / batch as f64;
        let rg = self.any_grad(&[probs]);
        let op = Op::WeightedBce {
            probs,
            targets: targets.to_vec(),
            weights,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// `Σ_i x_i c_i`, a scalar probe used to reduce tensors for gradient
    /// checks.
    pub fn dot(&mut self, x: Var, coeffs: &[f64]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != coeffs.len() {
            return Err(Error::ShapeMismatch(format!(
                "dot: {} values, {} coefficients",
                v.len(),
                coeffs.len()
            )));
        }
        let s = kernels::dot(v.data(), coeffs);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::Dot {
                x,
                coeffs: coeffs.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar. Gradients from earlier calls are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        for g in self.grads.drain(..).flatten() {
            pool::recycle(g);
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            } else {
                pool::recycle(g);
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) -> Result<()> {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| &nodes[v.0].value;
        let add_into =
            |dst: &mut Vec<f64>, src: &[f64]| dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, bias } => {
                let (batch, c_in, len) = val(*x).dims3("conv1d")?;
                let (c_out, _, kernel) = val(*w).dims3("conv1d")?;
                let dims = ConvDims {
                    batch,
                    c_in,
                    c_out,
                    len,
                    kernel,
                };
                if nodes[x.0].requires_grad {
                    accumulate(
                        nodes,
                        grads,
                        *x,
                        kernels::conv1d_backward_input(g, val(*w).data(), &dims),
                    );
                }
                if nodes[w.0].requires_grad {
                    accumulate(
                        nodes,
                        grads,
                        *w,
                        kernels::conv1d_backward_weight(g, val(*x).data(), &dims),
                    );
                }
                if let Some(b) = bias {
                    if let Some(db) = slot(nodes, grads, *b) {
                        add_into(db, &kernels::conv1d_backward_bias(g, &dims));
                    }
                }
            }
            Op::MaxPool1d { x, argmax } => {
                let len = val(*x).shape()[2];
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::maxpool1d_backward(g, argmax, len, dx);
                }
            }
            Op::GlobalAvgPool { x } => {
                let len = val(*x).shape()[2];
                if let Some(dx) = slot(nodes, grads, *x) {
                    let scale = 1.0 / len as f64;
                    for (row, gv) in dx.chunks_exact_mut(len).zip(g) {
                        row.iter_mut().for_each(|d| *d += gv * scale);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (batch, channels, len) = val(*x).dims3("batchnorm1d")?;
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for (r, (g_row, xh_row)) in
                    g.chunks_exact(len).zip(xhat.chunks_exact(len)).enumerate()
                {
                    let c = r % channels;
                    dbeta[c] += g_row.iter().sum::<f64>();
                    dgamma[c] += kernels::dot(g_row, xh_row);
                }
                if nodes[x.0].requires_grad {
                    let mut dx = pool::zeroed(g.len());
                    let m = (batch * len) as f64;
                    for (r, ((g_row, xh_row), dx_row)) in g
                        .chunks_exact(len)
                        .zip(xhat.chunks_exact(len))
                        .zip(dx.chunks_exact_mut(len))
                        .enumerate()
                    {
                        let c = r % channels;
                        let k = gam[c] * inv_std[c];
                        if *batch_stats {
                            // dx = γ/σ · (g − mean(g) − x̂·mean(g·x̂))
                            let (mean_g, mean_gx) = (dbeta[c] / m, dgamma[c] / m);
                            for ((d, gv), xh) in dx_row.iter_mut().zip(g_row).zip(xh_row) {
                                *d = k * (gv - mean_g - xh * mean_gx);
                            }
                        } else {
                            for (d, gv) in dx_row.iter_mut().zip(g_row) {
                                *d = k * gv;
                            }
                        }
                    }
                    accumulate(nodes, grads, *x, dx);
                }
                if let Some(dg) = slot(nodes, grads, *gamma) {
                    add_into(dg, &dgamma);
                }
                if let Some(db) = slot(nodes, grads, *beta) {
                    add_into(db, &dbeta);
                }
            }
            Op::Relu { x } => {
                let xs = val(*x).data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xs) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let ys = nodes[i].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(g).zip(ys) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax { x } => {
                let y = &nodes[i].value;
                let k = y.shape()[1];
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d_row, g_row), y_row) in dx
                        .chunks_exact_mut(k)
                        .zip(g.chunks_exact(k))
                        .zip(y.data().chunks_exact(k))
                    {
                        let s = kernels::dot(g_row, y_row);
                        for ((d, gv), yv) in d_row.iter_mut().zip(g_row).zip(y_row) {
                            *d += yv * (gv - s);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                accumulate(nodes, grads, *a, pool::collect(g.iter().copied()));
                accumulate(nodes, grads, *b, pool::collect(g.iter().copied()));
            }
            Op::Concat { parts } => {
                let (batch, total, len) = nodes[i].value.dims3("concat_channels")?;
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).shape()[1];
                    if let Some(dp) = slot(nodes, grads, p) {
                        for b in 0..batch {
                            let src =
                                &g[(b * total + offset) * len..(b * total + offset + c) * len];
                            let dst = &mut dp[b * c * len..(b + 1) * c * len];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += c;
                }
            }
            Op::Dense { x, w, bias } => {
                let (batch, features) = val(*x).dims2("dense")?;
                let outputs = val(*w).shape()[0];
                let (xs, ws) = (val(*x).data(), val(*w).data());
                if let Some(dx) = slot(nodes, grads, *x) {
                    for b in 0..batch {
                        let d_row = &mut dx[b * features..(b + 1) * features];
                        for o in 0..outputs {
                            let gv = g[b * outputs + o];
                            let w_row = &ws[o * features..(o + 1) * features];
                            d_row
                                .iter_mut()
                                .zip(w_row)
                                .for_each(|(d, wv)| *d += gv * wv);
                        }
                    }
                }
                if let Some(dw) = slot(nodes, grads, *w) {
                    for b in 0..batch {
                        let x_row = &xs[b * features..(b + 1) * features];
                        for o in 0..outputs {
                            let gv = g[b * outputs + o];
                            let d_row = &mut dw[o * features..(o + 1) * features];
                            d_row
                                .iter_mut()
                                .zip(x_row)
                                .for_each(|(d, xv)| *d += gv * xv);
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(db) = slot(nodes, grads, *b) {
                        for row in g.chunks_exact(outputs) {
                            add_into(db, row);
                        }
                    }
                }
            }
            Op::WeightedCce {
                probs,
                targets,
                weights,
            } => {
                let p = val(*probs);
                let (batch, k) = p.dims2("weighted_cce")?;
                let scale = -g[0] / batch as f64;
                if let Some(dp) = slot(nodes, grads, *probs) {
                    for (idx, (d, (pv, tv))) in
                        dp.iter_mut().zip(p.data().iter().zip(targets)).enumerate()
                    {
                        *d += scale * weights[idx % k] * tv / (pv + LOG_EPS);
                    }
                }
            }
            Op::WeightedBce {
                probs,
                targets,
                weights,
            } => {
                let p = val(*probs);
                let scale = -g[0] / p.len() as f64;
                if let Some(dp) = slot(nodes, grads, *probs) {
                    for ((d, pv), t) in dp.iter_mut().zip(p.data()).zip(targets) {
                        *d += scale
                            * (weights[1] * t / (pv + LOG_EPS)
                                - weights[0] * (1.0 - t) / (1.0 - pv + LOG_EPS));
                    }
                }
            }
            Op::Dot { x, coeffs } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().zip(coeffs).for_each(|(d, c)| *d += g[0] * c);
                }
            }
        }
        Ok(())
    }
}
