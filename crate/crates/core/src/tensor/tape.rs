use super::kernels;
use super::{mismatch, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    AddTiled(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    PrependToken {
        x: Var,
        token: Var,
        group: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. One tape serves one forward and
/// (optionally) one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the leaves, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn rows_of(t: &Tensor) -> (usize, usize) {
    let d = t.last_dim();
    (if d == 0 { 0 } else { t.len() / d }, d)
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

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Row-normalized attention weights `[blocks, heads, seq, seq]` recorded
    /// by an [`Tape::attention`] node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, rg))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("add", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// `x + y` with `y` repeated along the rows of `x`: `x` is viewed as
    /// `[m × n]`, `y` as `[t × n]` with `t` dividing `m`. Covers bias
    /// addition (`t = 1`) and position embeddings over a batch.
    pub fn add_tiled(&mut self, x: Var, y: Var) -> Result<Var, TensorError> {
        let (xt, yt) = (self.value(x), self.value(y));
        let n = xt.last_dim();
        if yt.last_dim() != n || n == 0 || yt.is_empty() || xt.len() % yt.len() != 0 {
            return Err(mismatch("add_tiled", xt, yt));
        }
        let yl = yt.len();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + yt.data()[i % yl])
            .collect();
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        self.push("add_tiled", out, Op::AddTiled(x, y), &[x, y])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())?;
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let (r, c) = x
            .dims2()
            .ok_or_else(|| TensorError::InvalidArgument("transpose needs a rank-2 tensor".into()))?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x.data()[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// `exp(x − max) / Σ exp(x − max)` along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        let rank = x.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut y = x.data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| y[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (y[idx(i)] - max).exp();
                    y[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    y[idx(i)] /= total;
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        self.push("softmax", out, Op::Softmax { x: a, axis }, &[a])
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// variance (population, plus `eps`), then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (xt, gt, bt) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xt.last_dim();
        if gt.len() != d || bt.len() != d {
            return Err(mismatch("layer_norm", xt, gt));
        }
        if !(eps > 0.0) {
            return Err(TensorError::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let (rows, _) = rows_of(xt);
        let mut xhat = vec![0.0; xt.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; xt.len()];
        for r in 0..rows {
            let row = &xt.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gt.data()[j] + bt.data()[j];
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), y)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            &[x, gamma, beta],
        )
    }

    /// Tanh-approximation GELU, see [`kernels::gelu`].
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| kernels::gelu(*v)).collect())?;
        self.push("gelu", out, Op::Gelu(a), &[a])
    }

    /// Mean over the batch of `−log softmax(logits)[label]`, with log-sum-exp
    /// stabilization. `logits` is `[B × K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let lt = self.value(logits);
        let (b, k) = lt.dims2().ok_or_else(|| {
            TensorError::InvalidArgument("cross_entropy needs [batch x classes] logits".into())
        })?;
        if labels.len() != b || b == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: lt.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: k });
        }
        let mut probs = vec![0.0; b * k];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lt.data()[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(total / b as f64);
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            &[logits],
        )
    }

    /// Multi-head scaled dot-product self-attention over independent blocks
    /// of `seq` consecutive rows. `q`, `k`, `v` are `[blocks·seq × D]`; head
    /// `h` uses columns `h·D/heads .. (h+1)·D/heads`, scores are scaled by
    /// `1/√(D/heads)`, and head outputs are concatenated back to `D` columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize, heads: usize) -> Result<Var, TensorError> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = qt
            .dims2()
            .ok_or_else(|| TensorError::InvalidArgument("attention needs rank-2 inputs".into()))?;
        if kt.shape() != qt.shape() {
            return Err(mismatch("attention", qt, kt));
        }
        if vt.shape() != qt.shape() {
            return Err(mismatch("attention", qt, vt));
        }
        if seq == 0 || rows % seq != 0 || heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidArgument(format!(
                "attention: {rows} rows / seq {seq}, {d} dims / {heads} heads"
            )));
        }
        let blocks = rows / seq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
        let mut probs = vec![0.0; blocks * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for b in 0..blocks {
            for h in 0..heads {
                let p = &mut probs[((b * heads + h) * seq) * seq..((b * heads + h + 1) * seq) * seq];
                let col = h * dh;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    let prow = &mut p[i * seq..(i + 1) * seq];
                    let mut max = f64::NEG_INFINITY;
                    for (j, pj) in prow.iter_mut().enumerate() {
                        let kj = &kd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                        *pj = s;
                        max = max.max(s);
                    }
                    let mut total = 0.0;
                    for pj in prow.iter_mut() {
                        *pj = (*pj - max).exp();
                        total += *pj;
                    }
                    for pj in prow.iter_mut() {
                        *pj /= total;
                    }
                    let orow = &mut out[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    for (j, &pj) in prow.iter().enumerate() {
                        let vj = &vd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![rows, d], out)?;
        self.push(
            "attention",
            out,
            Op::Attention { q, k, v, seq, heads, probs },
            &[q, k, v],
        )
    }

    /// Inserts `token` (`[1 × D]`) before every group of `group` rows of `x`
    /// (`[G·group × D]`), giving `[G·(group+1) × D]`.
    pub fn prepend_token(&mut self, x: Var, token: Var, group: usize) -> Result<Var, TensorError> {
        let (xt, tt) = (self.value(x), self.value(token));
        let (rows, d) = xt
            .dims2()
            .ok_or_else(|| TensorError::InvalidArgument("prepend_token needs rank-2 input".into()))?;
        if tt.len() != d || group == 0 || rows % group != 0 {
            return Err(mismatch("prepend_token", xt, tt));
        }
        let groups = rows / group;
        let mut data = Vec::with_capacity((rows + groups) * d);
        for g in 0..groups {
            data.extend_from_slice(tt.data());
            data.extend_from_slice(&xt.data()[g * group * d..(g + 1) * group * d]);
        }
        let out = Tensor::new(vec![rows + groups, d], data)?;
        self.push("prepend_token", out, Op::PrependToken { x, token, group }, &[x, token])
    }

    /// Selects rows of a rank-2 tensor, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let xt = self.value(x);
        let (r, d) = xt
            .dims2()
            .ok_or_else(|| TensorError::InvalidArgument("gather_rows needs rank-2 input".into()))?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(TensorError::InvalidArgument(format!("row {bad} out of range {r}")));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(&xt.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        self.push("gather_rows", out, Op::GatherRows { x, rows: rows.to_vec() }, &[x])
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let val = &node.value;
            match &node.op {
                Op::Leaf => {
                    leaf_grads[idx] = Some(Tensor::new(val.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (m, k) = at.dims2().expect("checked in forward");
                    let n = bt.last_dim();
                    if self.rg(*a) {
                        self.accumulate(&mut grads, *a, kernels::matmul_nt(&g, bt.data(), m, n, k));
                    }
                    if self.rg(*b) {
                        self.accumulate(&mut grads, *b, kernels::matmul_tn(at.data(), &g, m, k, n));
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::AddTiled(x, y) => {
                    if self.rg(*y) {
                        let yl = self.value(*y).len();
                        let mut gy = vec![0.0; yl];
                        for (i, gv) in g.iter().enumerate() {
                            gy[i % yl] += gv;
                        }
                        self.accumulate(&mut grads, *y, gy);
                    }
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Mul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let ga = g.iter().zip(bt.data()).map(|(p, q)| p * q).collect();
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = g.iter().zip(at.data()).map(|(p, q)| p * q).collect();
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, s) => {
                    let ga = g.iter().map(|v| v * s).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2().expect("checked in forward");
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => self.accumulate(&mut grads, *a, g),
                Op::Softmax { x, axis } => {
                    let (outer, len, inner) = axis_split(val.shape(), *axis);
                    let y = val.data();
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                gx[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let d = val.last_dim();
                    let gam = self.value(*gamma).data();
                    let rows = rstd.len();
                    if self.rg(*gamma) || self.rg(*beta) {
                        let mut gg = vec![0.0; d];
                        let mut gb = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                gg[j] += g[r * d + j] * xhat[r * d + j];
                                gb[j] += g[r * d + j];
                            }
                        }
                        self.accumulate(&mut grads, *gamma, gg);
                        self.accumulate(&mut grads, *beta, gb);
                    }
                    if self.rg(*x) {
                        let mut gx = vec![0.0; val.len()];
                        for r in 0..rows {
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..d {
                                let dh = g[r * d + j] * gam[j];
                                mean_dh += dh;
                                mean_dh_h += dh * xhat[r * d + j];
                            }
                            mean_dh /= d as f64;
                            mean_dh_h /= d as f64;
                            for j in 0..d {
                                let dh = g[r * d + j] * gam[j];
                                gx[r * d + j] = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                            }
                        }
                        self.accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a).data();
                    let ga = g.iter().zip(x).map(|(gv, xv)| gv * kernels::gelu_grad(*xv)).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let b = labels.len();
                    let k = probs.len() / b;
                    let scale = g[0] / b as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        gl[r * k + l] -= scale;
                    }
                    self.accumulate(&mut grads, *logits, gl);
                }
                Op::Attention { q, k, v, seq, heads, probs } => {
                    let (gq, gk, gv) = self.attention_backward(&g, *q, *k, *v, *seq, *heads, probs);
                    self.accumulate(&mut grads, *q, gq);
                    self.accumulate(&mut grads, *k, gk);
                    self.accumulate(&mut grads, *v, gv);
                }
                Op::PrependToken { x, token, group } => {
                    let d = val.last_dim();
                    let groups = val.len() / d / (group + 1);
                    let mut gt = vec![0.0; d];
                    let mut gx = Vec::with_capacity(groups * group * d);
                    for gi in 0..groups {
                        let base = gi * (group + 1) * d;
                        for (t, gv) in gt.iter_mut().zip(&g[base..base + d]) {
                            *t += gv;
                        }
                        gx.extend_from_slice(&g[base + d..base + (group + 1) * d]);
                    }
                    self.accumulate(&mut grads, *token, gt);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { x, rows } => {
                    let d = val.last_dim();
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for (o, &i) in rows.iter().enumerate() {
                        for j in 0..d {
                            gx[i * d + j] += g[o * d + j];
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        probs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let (rows, d) = self.value(q).dims2().expect("checked in forward");
        let blocks = rows / seq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = vec![0.0; rows * d];
        let mut gk = vec![0.0; rows * d];
        let mut gv = vec![0.0; rows * d];
        let mut dp = vec![0.0; seq];
        for b in 0..blocks {
            for h in 0..heads {
                let p = &probs[((b * heads + h) * seq) * seq..((b * heads + h + 1) * seq) * seq];
                let col = h * dh;
                let at = |r: usize| (b * seq + r) * d + col;
                for i in 0..seq {
                    let prow = &p[i * seq..(i + 1) * seq];
                    let go = &g[at(i)..at(i) + dh];
                    for j in 0..seq {
                        let vj = &vd[at(j)..at(j) + dh];
                        dp[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                        for (gvj, x) in gv[at(j)..at(j) + dh].iter_mut().zip(go) {
                            *gvj += prow[j] * x;
                        }
                    }
                    let dot: f64 = dp.iter().zip(prow).map(|(x, y)| x * y).sum();
                    for j in 0..seq {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            gq[at(i) + c] += ds * kd[at(j) + c];
                            gk[at(j) + c] += ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}
