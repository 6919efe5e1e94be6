//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] records every primitive executed during one forward pass,
//! together with whatever context the backward rule needs. Nodes are appended
//! in execution order, so the list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep. Tapes are cheap to build and
//! are meant to be thrown away after each step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeom};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
    Rows {
        input: Var,
        start: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    L2Norm(Var),
    ChannelMean {
        input: Var,
    },
    ChannelStd {
        input: Var,
    },
    Elementwise {
        input: Var,
        derivative: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.clone()).expect("shape kept"))
    }

    /// Gradient w.r.t. `var`, with zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var).unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub(crate) fn raw(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn checked(value: Tensor, op: &'static str) -> Result<Tensor> {
    if value.all_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("conv2d input")?;
        let (o, kc, kh, kw) = self.value(kernel).dims4("conv2d kernel")?;
        if kc != c {
            return Err(Error::shape(format!(
                "conv2d: input has {c} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geom = ConvGeom {
            batch: n,
            in_c: c,
            in_h: h,
            in_w: w,
            out_c: o,
            k_h: kh,
            k_w: kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let data = kernels::conv2d_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let out = checked(Tensor::new(vec![n, o, geom.out_h, geom.out_w], data)?, "conv2d")?;
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Adds a per-channel bias to an NCHW tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("channel_bias")?;
        if self.value(bias).numel() != c {
            return Err(Error::shape(format!(
                "channel_bias: {c} channels but bias has {} values",
                self.value(bias).numel()
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(input).data().to_vec();
        let hw = h * w;
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                data[off..off + hw].iter_mut().for_each(|x| *x += b[ci]);
            }
        }
        let out = checked(Tensor::new(vec![n, c, h, w], data)?, "channel_bias")?;
        let rg = self.any_grad(&[input, bias]);
        Ok(self.push(out, Op::ChannelBias { input, bias }, rg))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(input).dims2("dense input")?;
        let (wd, m) = self.value(weight).dims2("dense weight")?;
        if wd != d {
            return Err(Error::shape(format!(
                "dense: input has {d} features but weight is {wd}x{m}"
            )));
        }
        if self.value(bias).numel() != m {
            return Err(Error::shape(format!(
                "dense: bias has {} values, expected {m}",
                self.value(bias).numel()
            )));
        }
        let mut data = vec![0.0; n * m];
        let b = self.value(bias).data();
        for row in data.chunks_exact_mut(m) {
            row.copy_from_slice(b);
        }
        kernels::gemm(
            n,
            d,
            m,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            false,
            &mut data,
            true,
        );
        let out = checked(Tensor::new(vec![n, m], data)?, "dense")?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Dense { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d: window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::shape(format!(
                "maxpool2d: window {window} larger than input {h}x{w}"
            )));
        }
        let (data, argmax, oh, ow) = kernels::maxpool_forward(self.value(input).data(), n * c, h, w, window, stride);
        let out = Tensor::new(vec![n, c, oh, ow], data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn rows(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(input).dims2("rows")?;
        if len == 0 || start + len > n {
            return Err(Error::shape(format!(
                "rows: range {start}..{} outside 0..{n}",
                start + len
            )));
        }
        let data = self.value(input).data()[start * d..(start + len) * d].to_vec();
        let out = Tensor::new(vec![len, d], data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Rows { input, start }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {n} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {bad} outside 0..{c}"
            )));
        }
        let (loss, probs) = softmax_xent(self.value(logits).data(), c, labels);
        let out = checked(Tensor::scalar(loss), "softmax_cross_entropy")?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = checked(self.value(a).zip_map(self.value(b), |x, y| x + y)?, "add")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = checked(self.value(a).zip_map(self.value(b), |x, y| x - y)?, "sub")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = checked(self.value(a).zip_map(self.value(b), |x, y| x * y)?, "mul")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = checked(self.value(a).map(|x| x * factor), "scale")?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Scale(a, factor), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = checked(Tensor::scalar(self.value(a).sum()), "sum")?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Sum(a), rg))
    }

    /// Euclidean norm of all elements. The subgradient at zero is zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let norm = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = checked(Tensor::scalar(norm), "l2_norm")?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::L2Norm(a), rg))
    }

    /// Per-sample, per-channel spatial mean of an NCHW tensor, shape N×C.
    pub fn channel_mean(&mut self, input: Var) -> Result<Var> {
        let (n, c, _, _) = self.value(input).dims4("channel_mean")?;
        let (mean, _) = channel_stats_raw(self.value(input))?;
        let out = Tensor::new(vec![n, c], mean)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::ChannelMean { input }, rg))
    }

    /// Per-sample, per-channel population standard deviation, shape N×C.
    /// A constant channel has zero std and passes back a zero gradient.
    pub fn channel_std(&mut self, input: Var) -> Result<Var> {
        let (n, c, _, _) = self.value(input).dims4("channel_std")?;
        let (_, std) = channel_stats_raw(self.value(input))?;
        let out = Tensor::new(vec![n, c], std)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::ChannelStd { input }, rg))
    }

    /// Applies `f` elementwise with a caller-supplied derivative `df`.
    pub fn elementwise(&mut self, input: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(input);
        let out = checked(x.map(&f), "elementwise")?;
        let derivative = x.data().iter().map(|&v| df(v)).collect();
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Elementwise { input, derivative }, rg))
    }

    /// A hash of every branch decision taken in the forward pass (ReLU signs
    /// and max-pool winners). Two evaluations with equal fingerprints lie in
    /// the same smooth piece of the function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &x in self.nodes[input.0].value.data() {
                        mix((x > 0.0) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar `loss`. Gradients from multiple uses of a
    /// value are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let (dx, dk) = kernels::conv2d_backward(geom, val(input), val(kernel), up, wants(input), wants(kernel));
                if let Some(dx) = dx {
                    accumulate(&self.nodes, grads, *input, dx);
                }
                if let Some(dk) = dk {
                    accumulate(&self.nodes, grads, *kernel, dk);
                }
            }
            Op::ChannelBias { input, bias } => {
                if wants(input) {
                    accumulate(&self.nodes, grads, *input, up.to_vec());
                }
                if wants(bias) {
                    let (n, c, h, w) = self.nodes[input.0].value.dims4("channel_bias")?;
                    let mut db = vec![0.0; c];
                    for ni in 0..n {
                        for (ci, slot) in db.iter_mut().enumerate() {
                            let off = (ni * c + ci) * h * w;
                            *slot += up[off..off + h * w].iter().sum::<f64>();
                        }
                    }
                    accumulate(&self.nodes, grads, *bias, db);
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, d) = self.nodes[input.0].value.dims2("dense")?;
                let m = self.nodes[bias.0].value.numel();
                if wants(input) {
                    let mut dx = vec![0.0; n * d];
                    kernels::gemm(n, m, d, up, false, val(weight), true, &mut dx, false);
                    accumulate(&self.nodes, grads, *input, dx);
                }
                if wants(weight) {
                    let mut dw = vec![0.0; d * m];
                    kernels::gemm(d, n, m, val(input), true, up, false, &mut dw, false);
                    accumulate(&self.nodes, grads, *weight, dw);
                }
                if wants(bias) {
                    let mut db = vec![0.0; m];
                    for row in up.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    accumulate(&self.nodes, grads, *bias, db);
                }
            }
            Op::Relu { input } => {
                let dx = val(input)
                    .iter()
                    .zip(up)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(&self.nodes, grads, *input, dx);
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.nodes[input.0].value.numel()];
                for (&src, &g) in argmax.iter().zip(up) {
                    dx[src] += g;
                }
                accumulate(&self.nodes, grads, *input, dx);
            }
            Op::Reshape { input } => accumulate(&self.nodes, grads, *input, up.to_vec()),
            Op::Rows { input, start } => {
                let (_, d) = self.nodes[input.0].value.dims2("rows")?;
                let mut dx = vec![0.0; self.nodes[input.0].value.numel()];
                dx[start * d..start * d + up.len()].copy_from_slice(up);
                accumulate(&self.nodes, grads, *input, dx);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = up[0] / n as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * c + y] -= scale;
                }
                accumulate(&self.nodes, grads, *logits, dx);
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(&self.nodes, grads, *a, up.to_vec());
                }
                if wants(b) {
                    accumulate(&self.nodes, grads, *b, up.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(&self.nodes, grads, *a, up.to_vec());
                }
                if wants(b) {
                    accumulate(&self.nodes, grads, *b, up.iter().map(|g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(
                        &self.nodes,
                        grads,
                        *a,
                        up.iter().zip(val(b)).map(|(g, y)| g * y).collect(),
                    );
                }
                if wants(b) {
                    accumulate(
                        &self.nodes,
                        grads,
                        *b,
                        up.iter().zip(val(a)).map(|(g, x)| g * x).collect(),
                    );
                }
            }
            Op::Scale(a, f) => accumulate(&self.nodes, grads, *a, up.iter().map(|g| g * f).collect()),
            Op::Sum(a) => accumulate(&self.nodes, grads, *a, vec![up[0]; self.nodes[a.0].value.numel()]),
            Op::L2Norm(a) => {
                let norm = node.value.item();
                let dx = if norm > 0.0 {
                    val(a).iter().map(|x| up[0] * x / norm).collect()
                } else {
                    vec![0.0; self.nodes[a.0].value.numel()]
                };
                accumulate(&self.nodes, grads, *a, dx);
            }
            Op::ChannelMean { input } => {
                let (n, c, h, w) = self.nodes[input.0].value.dims4("channel_mean")?;
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for (plane, &g) in dx.chunks_exact_mut(hw).zip(up) {
                    plane.fill(g / hw as f64);
                }
                accumulate(&self.nodes, grads, *input, dx);
            }
            Op::ChannelStd { input } => {
                let x = &self.nodes[input.0].value;
                let (n, c, h, w) = x.dims4("channel_std")?;
                let hw = h * w;
                let std = node.value.data();
                let mut dx = vec![0.0; n * c * hw];
                for p in 0..n * c {
                    if std[p] <= 0.0 {
                        continue;
                    }
                    let src = &x.data()[p * hw..(p + 1) * hw];
                    let mean = src.iter().sum::<f64>() / hw as f64;
                    let k = up[p] / (hw as f64 * std[p]);
                    for (d, &v) in dx[p * hw..(p + 1) * hw].iter_mut().zip(src) {
                        *d = k * (v - mean);
                    }
                }
                accumulate(&self.nodes, grads, *input, dx);
            }
            Op::Elementwise { input, derivative } => {
                accumulate(
                    &self.nodes,
                    grads,
                    *input,
                    up.iter().zip(derivative).map(|(g, d)| g * d).collect(),
                );
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], var: Var, delta: Vec<f64>) {
    if !nodes[var.0].requires_grad {
        return;
    }
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

/// Max-subtracted softmax cross-entropy. Returns the batch-mean loss and the
/// row-wise probabilities.
pub(crate) fn softmax_xent(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, (row, out)) in logits
        .chunks_exact(classes)
        .zip(probs.chunks_exact_mut(classes))
        .enumerate()
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (x - max).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
        total += z.ln() - (row[labels[i]] - max);
    }
    (total / labels.len() as f64, probs)
}

/// Per-(sample, channel) mean and population std of an NCHW tensor.
pub(crate) fn channel_stats_raw(t: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = t.dims4("channel_stats")?;
    let hw = (h * w) as f64;
    let mut mean = Vec::with_capacity(n * c);
    let mut std = Vec::with_capacity(n * c);
    for plane in t.data().chunks_exact(h * w) {
        let m = plane.iter().sum::<f64>() / hw;
        let var = plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / hw;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok((mean, std))
}
