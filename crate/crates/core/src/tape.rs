//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A `Tape` records operations in construction order; `backward` replays them
//! in exact reverse order, so gradients are deterministic across runs.
//! Parameter nodes are bound with their *effective* (mask-applied) values;
//! the gradient accumulated into a parameter node is the dense gradient with
//! respect to the effective weights, i.e. it is populated at masked-off
//! positions too. Optimizers multiply by the mask themselves; regrowth reads
//! the dense gradient as-is.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifier of a bound parameter, assigned by the caller.

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Zero-padding mode for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size equals input spatial size (stride 1).
    Same,
    /// No padding; output shrinks by kernel-1.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MaskedLinear {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        padding: Padding,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    BceLogits {
        logits: NodeId,
        targets: NodeId,
    },
    /// mean(ln sigma(l)), or mean(ln sigma(-l)) when `negate` is set.
    MeanLogSigmoid {
        logits: NodeId,
        negate: bool,
    },
    Sum(NodeId),
    Add(NodeId, NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recorded computation graph. Build one per training step.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(sigma(x)).
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Parameter leaf. `effective` must already have the mask applied
    /// (values at masked-off positions zero). The dense gradient accumulated
    /// here covers every position, masked-off ones included.
    pub fn param(&mut self, effective: Tensor) -> NodeId {
        self.push(Op::Param, effective, true)
    }

    /// x[batch, in] * w[in, out] + bias[out].
    pub fn masked_linear(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Dimension(format!(
                "masked_linear: x {:?} vs w {:?}",
                xs, ws
            )));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[1]);
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [n_out] {
                return Err(Error::Dimension(format!(
                    "masked_linear: bias {:?}, expected [{}]",
                    bs, n_out
                )));
            }
        }
        let mut out = vec![0.0; batch * n_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for b in 0..batch {
                let xrow = &xv[b * n_in..(b + 1) * n_in];
                let orow = &mut out[b * n_out..(b + 1) * n_out];
                for (i, &xi) in xrow.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wrow = &wv[i * n_out..(i + 1) * n_out];
                    for (o, &wio) in wrow.iter().enumerate() {
                        orow[o] += xi * wio;
                    }
                }
            }
            if let Some(bn) = bias {
                let bv = self.nodes[bn.0].value.data();
                for b in 0..batch {
                    let orow = &mut out[b * n_out..(b + 1) * n_out];
                    for (o, ob) in orow.iter_mut().enumerate() {
                        *ob += bv[o];
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, n_out], out)?;
        value.check_finite("masked_linear output")?;
        let needs = self.needs(x) || self.needs(w) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(Op::MaskedLinear { x, w, bias }, value, needs))
    }

    /// Cross-correlation, stride 1. x[b, c_in, h, w], kernel[c_out, c_in, kh, kw].
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::Dimension(format!(
                "conv2d: x {:?} vs kernel {:?}",
                xs, ks
            )));
        }
        let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        let (out_h, out_w, pad_t, pad_l) = match padding {
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::Dimension(format!(
                        "conv2d: kernel {}x{} larger than input {}x{}",
                        kh, kw, h, w
                    )));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        let mut out = vec![0.0; batch * c_out * out_h * out_w];
        {
            let xv = self.value(x).data();
            let kv = self.value(kernel).data();
            for b in 0..batch {
                for co in 0..c_out {
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let mut acc = 0.0;
                            for ci in 0..c_in {
                                for dy in 0..kh {
                                    let iy = (oy + dy) as isize - pad_t as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for dx in 0..kw {
                                        let ix = (ox + dx) as isize - pad_l as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = xv[((b * c_in + ci) * h + iy as usize) * w
                                            + ix as usize];
                                        let ki = kv[((co * c_in + ci) * kh + dy) * kw + dx];
                                        acc += xi * ki;
                                    }
                                }
                            }
                            out[((b * c_out + co) * out_h + oy) * out_w + ox] = acc;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, out_h, out_w], out)?;
        value.check_finite("conv2d output")?;
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                padding,
            },
            value,
            needs,
        ))
    }

    fn unary(&mut self, op: Op, input: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let data: Vec<f64> = self.value(input).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(input);
        self.push(op, Tensor::new(shape, data).expect("shape preserved"), needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu(x), x, |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(
            Op::LeakyRelu(x, slope),
            x,
            |v| if v > 0.0 { v } else { slope * v },
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(x), x, sigmoid)
    }

    /// Mean binary cross-entropy from logits, log-sum-exp stable form.
    /// Targets must be exactly 0 or 1.
    pub fn bce_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let ls = self.value(logits).shape();
        let ts = self.value(targets).shape();
        if ls != ts {
            return Err(Error::Dimension(format!(
                "bce_logits: logits {:?} vs targets {:?}",
                ls, ts
            )));
        }
        if self.value(logits).is_empty() {
            return Err(Error::Dimension("bce_logits: empty batch".into()));
        }
        for &t in self.value(targets).data() {
            if t != 0.0 && t != 1.0 {
                return Err(Error::Domain(format!("bce_logits: target {} not in {{0,1}}", t)));
            }
        }
        let lv = self.value(logits).data();
        let tv = self.value(targets).data();
        let n = lv.len() as f64;
        let mut acc = 0.0;
        for (&l, &t) in lv.iter().zip(tv) {
            // max(l,0) - l*t + ln(1 + e^{-|l|})
            acc += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(acc / n);
        value.check_finite("bce_logits output")?;
        let needs = self.needs(logits);
        Ok(self.push(Op::BceLogits { logits, targets }, value, needs))
    }

    /// mean(ln sigma(l)), or mean(ln sigma(-l)) with `negate`.
    pub fn mean_log_sigmoid(&mut self, logits: NodeId, negate: bool) -> Result<NodeId> {
        if self.value(logits).is_empty() {
            return Err(Error::Dimension("mean_log_sigmoid: empty batch".into()));
        }
        let lv = self.value(logits).data();
        let sign = if negate { -1.0 } else { 1.0 };
        let acc: f64 = lv.iter().map(|&l| log_sigmoid(sign * l)).sum();
        let value = Tensor::scalar(acc / lv.len() as f64);
        value.check_finite("mean_log_sigmoid output")?;
        let needs = self.needs(logits);
        Ok(self.push(Op::MeanLogSigmoid { logits, negate }, value, needs))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(total), needs)
    }

    /// Elementwise addition of same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::new(shape, data)?;
        value.check_finite("add output")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    /// Reverse pass from a scalar loss node. Visits nodes in exact reverse
    /// construction order; gradients for parameter nodes are dense.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &out_grad, &mut grads);
            }
            grads[idx] = Some(out_grad);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, out_grad: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MaskedLinear { x, w, bias } => {
                let xs = self.value(*x).shape();
                let (batch, n_in) = (xs[0], xs[1]);
                let n_out = self.value(*w).shape()[1];
                let og = out_grad.data();
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    let dw = grad_buf(grads, *w, self.value(*w).shape());
                    for b in 0..batch {
                        let grow = &og[b * n_out..(b + 1) * n_out];
                        let xrow = &xv[b * n_in..(b + 1) * n_in];
                        for (i, &xi) in xrow.iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[i * n_out..(i + 1) * n_out];
                            for (o, d) in drow.iter_mut().enumerate() {
                                *d += xi * grow[o];
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let dx = grad_buf(grads, *x, xs);
                    for b in 0..batch {
                        let grow = &og[b * n_out..(b + 1) * n_out];
                        let xrow = &mut dx[b * n_in..(b + 1) * n_in];
                        for (i, xg) in xrow.iter_mut().enumerate() {
                            let wrow = &wv[i * n_out..(i + 1) * n_out];
                            let mut acc = 0.0;
                            for (o, &wio) in wrow.iter().enumerate() {
                                acc += grow[o] * wio;
                            }
                            *xg += acc;
                        }
                    }
                }
                if let Some(bn) = bias {
                    if self.needs(*bn) {
                        let db = grad_buf(grads, *bn, &[n_out]);
                        for b in 0..batch {
                            let grow = &og[b * n_out..(b + 1) * n_out];
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += grow[o];
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, kernel, padding } => {
                let xs = self.value(*x).shape().to_vec();
                let ks = self.value(*kernel).shape().to_vec();
                let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
                let (out_h, out_w, pad_t, pad_l) = match padding {
                    Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
                    Padding::Valid => (h - kh + 1, w - kw + 1, 0, 0),
                };
                let og = out_grad.data();
                if self.needs(*kernel) {
                    let xv = self.value(*x).data();
                    let dk = grad_buf(grads, *kernel, &ks);
                    for b in 0..batch {
                        for co in 0..c_out {
                            for oy in 0..out_h {
                                for ox in 0..out_w {
                                    let g = og[((b * c_out + co) * out_h + oy) * out_w + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c_in {
                                        for dy in 0..kh {
                                            let iy = (oy + dy) as isize - pad_t as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for dx in 0..kw {
                                                let ix = (ox + dx) as isize - pad_l as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                let xi = xv[((b * c_in + ci) * h + iy as usize)
                                                    * w
                                                    + ix as usize];
                                                dk[((co * c_in + ci) * kh + dy) * kw + dx] +=
                                                    g * xi;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    let kv = self.value(*kernel).data();
                    let dx = grad_buf(grads, *x, &xs);
                    for b in 0..batch {
                        for co in 0..c_out {
                            for oy in 0..out_h {
                                for ox in 0..out_w {
                                    let g = og[((b * c_out + co) * out_h + oy) * out_w + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c_in {
                                        for dy in 0..kh {
                                            let iy = (oy + dy) as isize - pad_t as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for dx_ in 0..kw {
                                                let ix = (ox + dx_) as isize - pad_l as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                dx[((b * c_in + ci) * h + iy as usize) * w
                                                    + ix as usize] += g
                                                    * kv[((co * c_in + ci) * kh + dy) * kw + dx_];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = grad_buf(grads, *x, self.value(*x).shape());
                for ((d, &v), &g) in dx.iter_mut().zip(xv).zip(out_grad.data()) {
                    if v > 0.0 {
                        *d += g;
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let dx = grad_buf(grads, *x, self.value(*x).shape());
                for ((d, &v), &g) in dx.iter_mut().zip(xv).zip(out_grad.data()) {
                    *d += if v > 0.0 { g } else { slope * g };
                }
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                let dx = grad_buf(grads, *x, self.value(*x).shape());
                for ((d, &y), &g) in dx.iter_mut().zip(yv).zip(out_grad.data()) {
                    *d += g * (1.0 - y * y);
                }
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let dx = grad_buf(grads, *x, self.value(*x).shape());
                for ((d, &y), &g) in dx.iter_mut().zip(yv).zip(out_grad.data()) {
                    *d += g * y * (1.0 - y);
                }
            }
            Op::BceLogits { logits, targets } => {
                if self.needs(*logits) {
                    let lv = self.value(*logits).data();
                    let tv = self.value(*targets).data();
                    let n = lv.len() as f64;
                    let g = out_grad.data()[0];
                    let dl = grad_buf(grads, *logits, self.value(*logits).shape());
                    for ((d, &l), &t) in dl.iter_mut().zip(lv).zip(tv) {
                        *d += g * (sigmoid(l) - t) / n;
                    }
                }
            }
            Op::MeanLogSigmoid { logits, negate } => {
                let lv = self.value(*logits).data();
                let n = lv.len() as f64;
                let g = out_grad.data()[0];
                let sign = if *negate { -1.0 } else { 1.0 };
                let dl = grad_buf(grads, *logits, self.value(*logits).shape());
                for (d, &l) in dl.iter_mut().zip(lv) {
                    // d/dl mean ln sigma(sign*l) = sign * sigma(-sign*l) / n
                    *d += g * sign * sigmoid(-sign * l) / n;
                }
            }
            Op::Sum(x) => {
                let g = out_grad.data()[0];
                let dx = grad_buf(grads, *x, self.value(*x).shape());
                for d in dx.iter_mut() {
                    *d += g;
                }
            }
            Op::Add(a, b) => {
                for input in [a, b] {
                    if self.needs(*input) {
                        let di = grad_buf(grads, *input, self.value(*input).shape());
                        for (d, &g) in di.iter_mut().zip(out_grad.data()) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'a mut [f64] {
    grads[id.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient accumulated at a node, if any flowed there.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node, zeros if none flowed.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}
