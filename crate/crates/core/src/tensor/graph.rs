//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every forward op as a node holding its output value.
//! Nodes are appended in execution order, so parents always precede children
//! and a single reverse sweep propagates gradients. Leaves come in two kinds:
//! [`Graph::input`] (constant) and [`Graph::param`] (gradient tracked). A
//! node tracks gradients iff any parent does, which is how a frozen network
//! can sit between a trainable one and the loss without receiving updates.

use crate::error::{Error, Result};

use super::conv;
use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    Conv2d { input: Var, weight: Var, stride: usize, padding: usize },
    Deconv2d { input: Var, weight: Var, stride: usize, padding: usize },
    InstanceNorm { input: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    FlipW(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    L1Mean(Var, Var),
    Sum(Var),
    Mean(Var),
    LogClamped(Var, f64),
    Reshape(Var),
    Select { input: Var, axis: usize, index: usize },
    SpatialMean(Var),
    TotalVariation(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded computation.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient of `var`, or zeros shaped like `like`
    /// when the loss does not depend on it.
    pub fn take_or_zeros(&mut self, var: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.dims().to_vec()))
    }

    /// Indices of leaves that received a gradient.
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_some())
            .map(|(i, _)| Var(i))
    }
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
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

    /// Which side of every kink each element sits on: ReLU inputs, `|a − b|`
    /// signs, the log clamp and total-variation differences. Two forward
    /// passes with equal patterns lie on one smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => out.extend(self.value(*a).data().iter().map(|&x| x > 0.0)),
                Op::L1Mean(a, b) => {
                    out.extend(self.value(*a).data().iter().zip(self.value(*b).data()).map(|(x, y)| x >= y))
                }
                Op::LogClamped(a, floor) => out.extend(self.value(*a).data().iter().map(|&x| x >= *floor)),
                Op::TotalVariation(a) => {
                    let t = self.value(*a);
                    if let Ok((_, _, h, w)) = t.nchw() {
                        for plane in t.data().chunks(h * w) {
                            for r in 0..h {
                                for c in 0..w {
                                    let v = plane[r * w + c];
                                    if c + 1 < w {
                                        out.push(plane[r * w + c + 1] >= v);
                                    }
                                    if r + 1 < h {
                                        out.push(plane[(r + 1) * w + c] >= v);
                                    }
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Gradient-tracked leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y).map_err(|_| {
            Error::dim("add", format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()))
        })?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        self.push("scale", v, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + offset);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    /// Adds a per-channel bias `[C]` to an `N×C×H×W` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::dim("add_bias", format!("{c} channels but bias has {} entries", b.len())));
        }
        let mut out = self.value(x).clone();
        let hw = h * w;
        for i in 0..n {
            for (ch, &bv) in b.data().iter().enumerate() {
                let off = (i * c + ch) * hw;
                out.data_mut()[off..off + hw].iter_mut().for_each(|v| *v += bv);
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = conv::conv2d_forward(self.value(input), self.value(weight), stride, padding)?;
        self.push("conv2d", v, Op::Conv2d { input, weight, stride, padding }, &[input, weight])
    }

    /// Transposed convolution with `I×O×K×K` weights; output extent
    /// `(h − 1)·stride − 2·padding + K`.
    pub fn deconv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = conv::deconv2d_forward(self.value(input), self.value(weight), stride, padding)?;
        self.push("deconv2d", v, Op::Deconv2d { input, weight, stride, padding }, &[input, weight])
    }

    /// Per-(sample, channel) normalization `(x − mean)/sqrt(var + eps)` with
    /// the biased variance.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(input).nchw()?;
        let hw = h * w;
        let x = self.value(input).data();
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n * c];
        for s in 0..n * c {
            let slice = &x[s * hw..(s + 1) * hw];
            let mean = slice.iter().sum::<f64>() / hw as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[s] = is;
            for (o, v) in normalized[s * hw..(s + 1) * hw].iter_mut().zip(slice) {
                *o = (v - mean) * is;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], normalized.clone())?;
        self.push("instance_norm", value, Op::InstanceNorm { input, normalized, inv_std }, &[input])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    /// Reverses the last axis.
    pub fn flip_w(&mut self, a: Var) -> Result<Var> {
        let v = flip_last_axis(self.value(a));
        self.push("flip_w", v, Op::FlipW(a), &[a])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.value(v))
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        if axis >= first.ndim() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {:?}", first.dims())));
        }
        let base = first.dims().to_vec();
        let mut total = 0;
        for &v in inputs {
            let d = self.value(v).dims();
            let matches = d.len() == base.len()
                && d.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !matches {
                return Err(Error::dim(
                    "concat",
                    format!("non-axis dims differ: {base:?} vs {d:?} (axis {axis})"),
                ));
            }
            total += d[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.dims()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut dims = base;
        dims[axis] = total;
        let value = Tensor::new(dims, data)?;
        self.push("concat", value, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// `mean(|a − b|)`.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("l1_mean", self.value(a), self.value(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let s: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum();
        let v = Tensor::scalar(s / x.len() as f64);
        self.push("l1_mean", v, Op::L1Mean(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// `log(max(a, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.push("log_clamped", v, Op::LogClamped(a, floor), &[a])
    }

    pub fn reshape(&mut self, a: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(a).reshape(dims)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    /// Picks `index` along `axis`, keeping the axis with extent 1.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.ndim() || index >= t.dims()[axis] {
            return Err(Error::dim("select", format!("index {index} on axis {axis} of {:?}", t.dims())));
        }
        let outer: usize = t.dims()[..axis].iter().product();
        let inner: usize = t.dims()[axis + 1..].iter().product();
        let extent = t.dims()[axis];
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let off = (o * extent + index) * inner;
            data.extend_from_slice(&t.data()[off..off + inner]);
        }
        let mut dims = t.dims().to_vec();
        dims[axis] = 1;
        let v = Tensor::new(dims, data)?;
        self.push("select", v, Op::Select { input: a, axis, index }, &[a])
    }

    /// Global average pool: `N×C×H×W → N×C`.
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).nchw()?;
        let hw = h * w;
        let data = self
            .value(a)
            .data()
            .chunks(hw)
            .map(|s| s.iter().sum::<f64>() / hw as f64)
            .collect();
        let v = Tensor::new(vec![n, c], data)?;
        self.push("spatial_mean", v, Op::SpatialMean(a), &[a])
    }

    /// Anisotropic total variation of an `N×C×H×W` tensor: forward
    /// differences along both spatial axes, summed over all channels and
    /// divided by the total entry count.
    pub fn total_variation(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, c, h, w) = t.nchw()?;
        let x = t.data();
        let mut s = 0.0;
        for plane in x.chunks(h * w).take(n * c) {
            for r in 0..h {
                for col in 0..w {
                    let v = plane[r * w + col];
                    if col + 1 < w {
                        s += (plane[r * w + col + 1] - v).abs();
                    }
                    if r + 1 < h {
                        s += (plane[(r + 1) * w + col] - v).abs();
                    }
                }
            }
        }
        let v = Tensor::scalar(s / t.len() as f64);
        self.push("total_variation", v, Op::TotalVariation(a), &[a])
    }

    /// Reverse sweep from a scalar `loss`. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.dims().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Contract(
                "loss does not depend on any gradient-tracked parameter".into(),
            ));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.dims().to_vec()));
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                leaves[idx] = Some(gout);
                continue;
            }
            self.propagate(idx, gout, &mut grads)?;
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(e, v)| *e += v),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, gout: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, gout.map(|v| -v));
                self.accumulate(grads, *a, gout);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, gout.zip_map(vb, |g, y| g * y)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, gout.zip_map(va, |g, x| g * x)?);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, gout.map(|v| v * f)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let dims = self.value(*a).dims().to_vec();
                self.accumulate(grads, *a, gout.reshape(dims)?);
            }
            Op::AddBias(x, bias) => {
                if self.requires_grad(*bias) {
                    let (n, c, h, w) = gout.nchw()?;
                    let mut db = vec![0.0; c];
                    for i in 0..n {
                        for (ch, d) in db.iter_mut().enumerate() {
                            let off = (i * c + ch) * h * w;
                            *d += gout.data()[off..off + h * w].iter().sum::<f64>();
                        }
                    }
                    let dims = self.value(*bias).dims().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(dims, db)?);
                }
                self.accumulate(grads, *x, gout);
            }
            Op::Conv2d { input, weight, stride, padding } => {
                let (dx, dw) = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    &gout,
                    *stride,
                    *padding,
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *weight, dw);
                }
            }
            Op::Deconv2d { input, weight, stride, padding } => {
                let (dx, dw) = conv::deconv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    &gout,
                    *stride,
                    *padding,
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *weight, dw);
                }
            }
            Op::InstanceNorm { input, normalized, inv_std } => {
                // dx = inv_std · (g − mean(g) − x̂·mean(g·x̂)) per slice
                let (_, _, h, w) = gout.nchw()?;
                let hw = h * w;
                let g = gout.data();
                let mut dx = vec![0.0; g.len()];
                for (s, &is) in inv_std.iter().enumerate() {
                    let gs = &g[s * hw..(s + 1) * hw];
                    let xs = &normalized[s * hw..(s + 1) * hw];
                    let mg = gs.iter().sum::<f64>() / hw as f64;
                    let mgx = gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
                    for ((d, gv), xv) in dx[s * hw..(s + 1) * hw].iter_mut().zip(gs).zip(xs) {
                        *d = is * (gv - mg - xv * mgx);
                    }
                }
                self.accumulate(grads, *input, Tensor::new(gout.dims().to_vec(), dx)?);
            }
            Op::Relu(a) => {
                let d = gout.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = gout.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { g * slope })?;
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = gout.zip_map(out, |g, y| g * (1.0 - y * y))?;
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = gout.zip_map(out, |g, y| g * y * (1.0 - y))?;
                self.accumulate(grads, *a, d);
            }
            Op::FlipW(a) => self.accumulate(grads, *a, flip_last_axis(&gout)),
            Op::Concat { inputs, axis } => {
                let dims = out.dims();
                let outer: usize = dims[..*axis].iter().product();
                let inner: usize = dims[axis + 1..].iter().product();
                let total = dims[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let vd = self.value(v).dims().to_vec();
                    let extent = vd[*axis];
                    if self.requires_grad(v) {
                        let mut data = Vec::with_capacity(outer * extent * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            data.extend_from_slice(&gout.data()[start..start + extent * inner]);
                        }
                        self.accumulate(grads, v, Tensor::new(vd, data)?);
                    }
                    offset += extent;
                }
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = gout.item() / va.len() as f64;
                let da = va.zip_map(vb, |x, y| k * sign(x - y))?;
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, da.map(|v| -v));
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let g = gout.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).dims().to_vec(), g));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let g = gout.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.dims().to_vec(), g));
            }
            Op::LogClamped(a, floor) => {
                let d = gout.zip_map(self.value(*a), |g, x| if x > *floor { g / x } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::Select { input, axis, index } => {
                let t = self.value(*input);
                let outer: usize = t.dims()[..*axis].iter().product();
                let inner: usize = t.dims()[axis + 1..].iter().product();
                let extent = t.dims()[*axis];
                let mut d = vec![0.0; t.len()];
                for o in 0..outer {
                    let off = (o * extent + index) * inner;
                    d[off..off + inner].copy_from_slice(&gout.data()[o * inner..(o + 1) * inner]);
                }
                self.accumulate(grads, *input, Tensor::new(t.dims().to_vec(), d)?);
            }
            Op::SpatialMean(a) => {
                let t = self.value(*a);
                let (_, _, h, w) = t.nchw()?;
                let hw = h * w;
                let mut d = Vec::with_capacity(t.len());
                for &g in gout.data() {
                    d.extend(std::iter::repeat_n(g / hw as f64, hw));
                }
                self.accumulate(grads, *a, Tensor::new(t.dims().to_vec(), d)?);
            }
            Op::TotalVariation(a) => {
                let t = self.value(*a);
                let (_, _, h, w) = t.nchw()?;
                let k = gout.item() / t.len() as f64;
                let x = t.data();
                let mut d = vec![0.0; x.len()];
                for (p, plane) in x.chunks(h * w).enumerate() {
                    let dp = &mut d[p * h * w..(p + 1) * h * w];
                    for r in 0..h {
                        for c in 0..w {
                            let i = r * w + c;
                            if c + 1 < w {
                                let s = k * sign(plane[i + 1] - plane[i]);
                                dp[i + 1] += s;
                                dp[i] -= s;
                            }
                            if r + 1 < h {
                                let s = k * sign(plane[i + w] - plane[i]);
                                dp[i + w] += s;
                                dp[i] -= s;
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(t.dims().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn flip_last_axis(t: &Tensor) -> Tensor {
    let w = *t.dims().last().expect("tensor has at least one axis");
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_scaling_kernel() {
        let mut g = Graph::new();
        let x = g.input(Tensor::ones([1, 1, 3, 3]));
        let w = g.input(t(&[1, 1, 1, 1], &[2.0]));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_output_size_formula() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 4, 4], 0.3));
        let w = g.input(Tensor::full([1, 1, 3, 3], 0.1));
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 1, 2, 2]);
    }

    #[test]
    fn conv_reports_offending_axes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([1, 2, 4, 4]));
        let w = g.input(Tensor::zeros([1, 3, 3, 3]));
        let err = g.conv2d(x, w, 1, 1).unwrap_err().to_string();
        assert!(err.contains("2 channels") && err.contains("expects 3"), "{err}");
        let small = g.input(Tensor::zeros([1, 3, 2, 2]));
        assert!(g.conv2d(small, w, 1, 0).is_err());
    }

    #[test]
    fn deconv_shapes_and_identity() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 2, 2], 1.0));
        let w = g.input(Tensor::full([1, 1, 4, 4], 1.0));
        let y = g.deconv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 1, 4, 4]);

        let data = [0.5, -1.0, 2.0, 3.5, 0.25, 7.0];
        let x = g.input(t(&[1, 1, 2, 3], &data));
        let id = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.deconv2d(x, id, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data);
    }

    #[test]
    fn instance_norm_cases() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 2, 2], 5.0));
        let y = g.instance_norm(x, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        // mean 2, biased variance 1 → ±1/sqrt(1 + 1e-5)
        let x = g.input(t(&[1, 1, 1, 2], &[1.0, 3.0]));
        let y = g.instance_norm(x, 1e-5).unwrap();
        let out = g.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-4 && out[0] > -1.0);
        assert!((out[1] - 1.0).abs() < 1e-4 && out[1] < 1.0);
    }

    #[test]
    fn elementwise_cases() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[-1.0]));
        let y = g.leaky_relu(x, 0.02).unwrap();
        assert!((g.value(y).item() + 0.02).abs() < 1e-15);

        let a = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let l = g.l1_mean(a, a).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let f = g.flip_w(a).unwrap();
        assert_eq!(g.value(f).data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        let ff = g.flip_w(f).unwrap();
        assert_eq!(g.value(ff), g.value(a));
    }

    #[test]
    fn concat_checks_non_axis_dims() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros([1, 2, 3, 3]));
        let b = g.input(Tensor::ones([1, 1, 3, 3]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).dims(), &[1, 3, 3, 3]);
        assert_eq!(g.value(c).sum(), 9.0);
        let bad = g.input(Tensor::ones([1, 1, 4, 3]));
        assert!(g.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn backward_simple_rules() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let data = [0.3, -1.2, 2.0];
        let mut g = Graph::new();
        let x = g.param(t(&[3], &data));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let single = g.backward(s).unwrap().get(x).unwrap().clone();

        let mut g = Graph::new();
        let x = g.param(t(&[3], &data));
        let sq = g.mul(x, x).unwrap();
        let twice = g.add(sq, sq).unwrap();
        let s = g.sum(twice).unwrap();
        let double = g.backward(s).unwrap().get(x).unwrap().clone();
        for (a, b) in single.data().iter().zip(double.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones([2]));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));

        let mut g = Graph::new();
        let c = g.input(Tensor::ones([2]));
        let s = g.sum(c).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.input(Tensor::full([1, 1, 1, 1], 3.0));
        let x = g.param(Tensor::ones([1, 1, 2, 2]));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn total_variation_hand_value() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 1, 2], &[0.0, 1.0]));
        let tv = g.total_variation(x).unwrap();
        assert_eq!(g.value(tv).item(), 0.5);
    }
}
