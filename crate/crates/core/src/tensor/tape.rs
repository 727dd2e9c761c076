use super::{axis_split, check_finite, softmax, Mask, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, smoothing: f64, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order by
/// construction: an operation can only reference vars that already exist.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; all zeros when `var` is not on a path to the loss.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    /// Like [`Gradients::get`] but `None` when no gradient reached `var`.
    pub fn try_get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[var.0].clone(), g.clone()))
    }
}

fn expect_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta),
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        Ok(self.push(value, op, inputs))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_rank2("matmul", self.value(a))?;
        let (k2, n) = expect_rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        self.push_checked("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push_checked("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push_checked("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push_checked("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector of length `cols` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.shape(bias) != [cols] {
            return Err(Error::shape("add_bias", format!("bias {:?} for {cols} columns", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let data = xv.data().chunks(cols).flat_map(|r| r.iter().zip(b).map(|(p, q)| p + q)).collect();
        let v = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push_checked("add_bias", v, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let v = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|p| p * c).collect());
        self.push_checked("scale", v, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let v = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|p| p.max(0.0)).collect());
        Ok(self.push(v, Op::Relu(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = softmax(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalizes each row over the last axis, then applies `gain * x + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(Error::shape("layer_norm", format!("gain/bias must have length {cols}")));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.numel() / cols;
        let mut normed = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normed[r * cols + c] = n;
                out[r * cols + c] = g[c] * n + b[c];
            }
        }
        let v = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push_checked("layer_norm", v, Op::LayerNorm { x, gain, bias, normed, inv_std }, &[x, gain, bias])
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[tq, d]`, `k` and `v` are `[tk, d]`; the model width is split
    /// into `heads` contiguous slices. Masked keys get exactly zero weight;
    /// a query with every key masked produces a zero row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&Mask>, heads: usize) -> Result<Var> {
        let (tq, d) = expect_rank2("attention", self.value(q))?;
        let (tk, dk) = expect_rank2("attention", self.value(k))?;
        let (tv, dv) = expect_rank2("attention", self.value(v))?;
        if d != dk || d != dv || tk != tv {
            return Err(Error::shape("attention", format!("q [{tq},{d}] k [{tk},{dk}] v [{tv},{dv}]")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if let Some(m) = mask {
            if m.cols() != tk || (m.rows() != 1 && m.rows() != tq) {
                return Err(Error::shape(
                    "attention",
                    format!("mask [{},{}] for scores [{tq},{tk}]", m.rows(), m.cols()),
                ));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let qi = &qd[i * d + off..i * d + off + dh];
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let mut max = f64::NEG_INFINITY;
                for j in 0..tk {
                    if mask.map_or(true, |m| m.allows(i, j)) {
                        let s = dot(qi, &kd[j * d + off..j * d + off + dh]) * scale;
                        p[j] = s;
                        max = max.max(s);
                    } else {
                        p[j] = f64::NEG_INFINITY;
                    }
                }
                if max == f64::NEG_INFINITY {
                    p.iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                let mut sum = 0.0;
                for x in p.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                let o = &mut out[i * d + off..i * d + off + dh];
                for j in 0..tk {
                    p[j] /= sum;
                    if p[j] != 0.0 {
                        let vj = &vd[j * d + off..j * d + off + dh];
                        o.iter_mut().zip(vj).for_each(|(a, b)| *a += p[j] * b);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![tq, d], out);
        self.push_checked("attention", value, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    /// Gathers rows of `table` (`[vocab, d]`).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = expect_rank2("embedding", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad as u32, size: vocab });
        }
        let t = self.value(table).data();
        let data = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        let v = Tensor::from_parts(vec![ids.len(), d], data);
        Ok(self.push(v, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Stacks `kernel` consecutive frames (zero padded by `pad` on both ends)
    /// every `stride` frames: `[t, d] -> [t', kernel * d]`. A strided 1-D
    /// convolution is this followed by a matmul.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, d) = expect_rank2("unfold", self.value(x))?;
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(Error::shape("unfold", format!("{t} frames, kernel {kernel}, stride {stride}, pad {pad}")));
        }
        let out_t = (t + 2 * pad - kernel) / stride + 1;
        let xd = self.value(x).data();
        let mut out = vec![0.0; out_t * kernel * d];
        for o in 0..out_t {
            for k in 0..kernel {
                let src = (o * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let s = src as usize;
                    out[(o * kernel + k) * d..(o * kernel + k + 1) * d].copy_from_slice(&xd[s * d..(s + 1) * d]);
                }
            }
        }
        let v = Tensor::from_parts(vec![out_t, kernel * d], out);
        Ok(self.push(v, Op::Unfold { x, kernel, stride, pad }, &[x]))
    }

    /// Mean over rows of label-smoothed cross-entropy.
    ///
    /// The smoothed target puts `1 - smoothing` on the gold class and
    /// spreads `smoothing` uniformly over the whole vocabulary.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let (rows, vocab) = expect_rank2("cross_entropy", self.value(logits))?;
        if rows != targets.len() {
            return Err(Error::shape("cross_entropy", format!("{rows} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad as u32, size: vocab });
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("label smoothing {smoothing}")));
        }
        let probs = softmax(self.value(logits), 1)?;
        let x = self.value(logits).data();
        let mut total = 0.0;
        for r in 0..rows {
            let row = &x[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let nll = lse - row[targets[r]];
            let uniform = lse - row.iter().sum::<f64>() / vocab as f64;
            total += (1.0 - smoothing) * nll + smoothing * uniform;
        }
        let v = Tensor::scalar(total / rows as f64);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing, probs: probs.data().to_vec() };
        self.push_checked("cross_entropy", v, op, &[logits])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // only leaves and nodes that require grad keep a gradient
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = dot(gi, &bd[p * n..(p + 1) * n]);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip != 0.0 {
                                gb[p * n..(p + 1) * n].iter_mut().zip(gi).for_each(|(o, &x)| *o += aip * x);
                            }
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], g.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.iter().zip(bd).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.iter().zip(ad).map(|(x, y)| x * y).collect());
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
                if self.wants(*b) {
                    let cols = out.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.iter().map(|v| v * c).collect());
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xd = self.value(*x).data();
                    accumulate(&mut grads[x.0], g.iter().zip(xd).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect());
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let y = out.data();
                    let (outer, len, inner) = axis_split(out.shape(), *axis);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let s: f64 = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] = y[at(k)] * (g[at(k)] - s);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let cols = out.cols();
                let gd = self.value(*gain).data();
                if self.wants(*gain) {
                    let mut gg = vec![0.0; cols];
                    for (row, nrow) in g.chunks(cols).zip(normed.chunks(cols)) {
                        gg.iter_mut().zip(row.iter().zip(nrow)).for_each(|(o, (a, b))| *o += a * b);
                    }
                    accumulate(&mut grads[gain.0], gg);
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                    accumulate(&mut grads[bias.0], gb);
                }
                if self.wants(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let nf = cols as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let nr = &normed[r * cols..(r + 1) * cols];
                        let dn: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let mean_dn = dn.iter().sum::<f64>() / nf;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for c in 0..cols {
                            gx[r * cols + c] = inv * (dn[c] - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, d) = (self.value(*q).rows(), self.value(*q).cols());
                let tk = self.value(*k).rows();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![0.0; tq * d];
                let mut gk = vec![0.0; tk * d];
                let mut gv = vec![0.0; tk * d];
                let mut dp = vec![0.0; tk];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..tq {
                        let p = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                        let go = &g[i * d + off..i * d + off + dh];
                        let mut weighted = 0.0;
                        for j in 0..tk {
                            if p[j] == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            gv[j * d + off..j * d + off + dh].iter_mut().zip(go).for_each(|(o, x)| *o += p[j] * x);
                            dp[j] = dot(go, &vd[j * d + off..j * d + off + dh]);
                            weighted += p[j] * dp[j];
                        }
                        for j in 0..tk {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - weighted) * scale;
                            let kj = &kd[j * d + off..j * d + off + dh];
                            gq[i * d + off..i * d + off + dh].iter_mut().zip(kj).for_each(|(o, x)| *o += ds * x);
                            let qi = &qd[i * d + off..i * d + off + dh];
                            gk[j * d + off..j * d + off + dh].iter_mut().zip(qi).for_each(|(o, x)| *o += ds * x);
                        }
                    }
                }
                for (var, gr) in [(q, gq), (k, gk), (v, gv)] {
                    if self.wants(*var) {
                        accumulate(&mut grads[var.0], gr);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut gt = vec![0.0; tv.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(o, v)| *o += v);
                    }
                    accumulate(&mut grads[table.0], gt);
                }
            }
            Op::Unfold { x, kernel, stride, pad } => {
                if self.wants(*x) {
                    let (t, d) = (self.value(*x).rows(), self.value(*x).cols());
                    let out_t = out.rows();
                    let mut gx = vec![0.0; t * d];
                    for o in 0..out_t {
                        for kk in 0..*kernel {
                            let src = (o * stride + kk) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let s = src as usize;
                                let from = &g[(o * kernel + kk) * d..(o * kernel + kk + 1) * d];
                                gx[s * d..(s + 1) * d].iter_mut().zip(from).for_each(|(a, b)| *a += b);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::CrossEntropy { logits, targets, smoothing, probs } => {
                if self.wants(*logits) {
                    let vocab = self.value(*logits).cols();
                    let rows = targets.len() as f64;
                    let spread = smoothing / vocab as f64;
                    let mut gl = vec![0.0; probs.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..vocab {
                            let target = spread + if c == t { 1.0 - smoothing } else { 0.0 };
                            gl[r * vocab + c] = g[0] * (probs[r * vocab + c] - target) / rows;
                        }
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
    }
}
