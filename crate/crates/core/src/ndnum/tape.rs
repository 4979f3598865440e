//! Computation record for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every input of a node has a
//! smaller index than the node itself and the reverse sweep is a plain
//! backwards walk.

use super::gemm::{gemm, View, ViewMut};
use super::{normal_cdf, normal_pdf, Real, Tensor};
use crate::error::{Error, Result};

/// Additive bias applied to disallowed attention logits before the softmax.
pub const MASK_BIAS: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Square boolean attention mask; `allows(i, j)` means token `i` may attend
/// to token `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n * n {
            return Err(Error::Dimension {
                op: "attention_mask",
                lhs: vec![n, n],
                rhs: vec![allowed.len()],
            });
        }
        Ok(Self { n, allowed })
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                allowed.push(f(i, j));
            }
        }
        Self { n, allowed }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.n..(i + 1) * self.n]
    }

    /// One past the largest key index any query may attend to. Keys beyond it
    /// receive zero weight from every row.
    fn key_extent(&self) -> usize {
        (0..self.n)
            .rev()
            .find(|&j| (0..self.n).any(|i| self.allows(i, j)))
            .map_or(0, |j| j + 1)
    }
}

/// Projection parameters of one multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: usize,
        probs: Vec<T>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(Error::Dimension {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// `x · w + b` for `x: n×p`, `w: p×q`, `b: q`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, p) = self.matrix_dims(x, "linear")?;
        let wt = self.value(w);
        let bt = self.value(b);
        if wt.shape().len() != 2 || wt.shape()[0] != p {
            return Err(Error::Dimension {
                op: "linear",
                lhs: vec![n, p],
                rhs: wt.shape().to_vec(),
            });
        }
        let q = wt.shape()[1];
        if bt.shape() != [q] {
            return Err(Error::Dimension {
                op: "linear bias",
                lhs: vec![q],
                rhs: bt.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * q);
        for _ in 0..n {
            out.extend_from_slice(bt.data());
        }
        gemm(
            T::one(),
            View::matrix(self.value(x).data(), n, p),
            View::matrix(wt.data(), p, q),
            T::one(),
            ViewMut::matrix(&mut out, n, q),
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, q], out)?, Op::Linear { x, w, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let bv = self.value(b).data();
        let data = self.value(a).data().iter().zip(bv).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// Exact-erf GeLU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::lit(v.as_f64() * normal_cdf(v.as_f64())));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Softmax over the trailing axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.cols() == 0 {
            return Err(Error::Input("softmax over an empty axis".into()));
        }
        if !t.all_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let k = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(k) {
            softmax_in_place(row);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Row-wise layer normalization of `x: n×h` followed by `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, h) = self.matrix_dims(x, "layer_norm")?;
        if h == 0 {
            return Err(Error::Input("layer_norm over zero features".into()));
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.shape() != [h] || b.shape() != [h] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: vec![h],
                rhs: g.shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let mut xhat = Vec::with_capacity(n * h);
        let mut rstd = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * h);
        let hf = T::lit(h as f64);
        for row in xs.chunks(h) {
            let mean = row.iter().copied().sum::<T>() / hf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hf;
            let r = T::one() / (var + T::lit(eps)).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * r;
                xhat.push(xh);
                out.push(xh * g.data()[j] + b.data()[j]);
            }
        }
        let out = Tensor::new(vec![n, h], out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Scaled dot-product attention over already projected `q`, `k`, `v`
    /// (each `n×h`), split into `heads` heads and concatenated back.
    pub fn attention_core(&mut self, q: Var, k: Var, v: Var, mask: &AttentionMask, heads: usize) -> Result<Var> {
        let (n, h) = self.matrix_dims(q, "attention")?;
        self.same_shape(q, k, "attention k")?;
        self.same_shape(q, v, "attention v")?;
        if heads == 0 || h % heads != 0 {
            return Err(Error::Input(format!("hidden width {h} not divisible by {heads} heads")));
        }
        if mask.size() != n {
            return Err(Error::Dimension {
                op: "attention mask",
                lhs: vec![n, n],
                rhs: vec![mask.size(), mask.size()],
            });
        }
        if let Some(i) = (0..n).find(|&i| !mask.row(i).iter().any(|&a| a)) {
            return Err(Error::Contract(format!("attention row {i} has no allowed positions")));
        }
        let dh = h / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let keys = mask.key_extent();
        let bias = T::lit(MASK_BIAS);

        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * n * keys];
        let mut out = vec![T::zero(); n * h];
        for head in 0..heads {
            let p = &mut probs[head * n * keys..(head + 1) * n * keys];
            let qh = View::matrix(qd, n, h).col_block(head * dh, dh);
            let kh = View::matrix(kd, n, h).row_block(0, keys).col_block(head * dh, dh);
            gemm(scale, qh, kh.t(), T::zero(), ViewMut::matrix(p, n, keys));
            for (i, row) in p.chunks_mut(keys).enumerate() {
                for (s, &allowed) in row.iter_mut().zip(mask.row(i)) {
                    if !allowed {
                        *s += bias;
                    }
                }
                softmax_in_place(row);
            }
            let vh = View::matrix(vd, n, h).row_block(0, keys).col_block(head * dh, dh);
            gemm(
                T::one(),
                View::matrix(p, n, keys),
                vh,
                T::zero(),
                ViewMut::matrix(&mut out, n, h).col_block(head * dh, dh),
            );
        }
        let out = Tensor::new(vec![n, h], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            },
            rg,
        ))
    }

    /// Multi-head masked self-attention including the Q/K/V and output
    /// projections.
    pub fn masked_attention(
        &mut self,
        x: Var,
        w: &AttentionWeights,
        mask: &AttentionMask,
        heads: usize,
    ) -> Result<Var> {
        let q = self.linear(x, w.wq, w.bq)?;
        let k = self.linear(x, w.wk, w.bk)?;
        let v = self.linear(x, w.wv, w.bv)?;
        let core = self.attention_core(q, k, v, mask, heads)?;
        self.linear(core, w.wo, w.bo)
    }

    /// Attention weights recorded by an [`Tape::attention_core`] node, as
    /// `heads × n × n` with zeros for keys no row may attend to.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<Vec<T>>>> {
        match &self.nodes[v.0].op {
            Op::Attention { heads, keys, probs, .. } => {
                let n = self.nodes[v.0].value.rows();
                Some(
                    (0..*heads)
                        .map(|hd| {
                            (0..n)
                                .map(|i| {
                                    let mut row = vec![T::zero(); n];
                                    let base = hd * n * keys + i * keys;
                                    row[..*keys].copy_from_slice(&probs[base..base + keys]);
                                    row
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Input(format!("row {bad} out of range for {n} rows")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectRows { x, rows: rows.to_vec() }, rg))
    }

    /// Mean negative log-likelihood of integer labels under softmax(logits).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.matrix_dims(logits, "cross_entropy")?;
        if n == 0 {
            return Err(Error::Input("cross_entropy over zero rows".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![n],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} outside 0..{k}")));
        }
        let t = self.value(logits);
        if !t.all_finite() {
            return Err(Error::Numeric("cross_entropy logits not finite".into()));
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0f64;
        for (row, (logit_row, &label)) in probs.chunks_mut(k).zip(t.data().chunks(k).zip(labels)) {
            let max = logit_row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max.as_f64() + logit_row.iter().map(|&z| (z - max).as_f64().exp()).sum::<f64>().ln();
            total += lse - logit_row[label].as_f64();
            softmax_in_place(row);
        }
        let out = Tensor::scalar(T::lit(total / n as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every node
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            let mut acc = Acc {
                tape: self,
                grads: &mut grads,
                at: idx,
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Linear { x, w, b } => {
                    let (n, p) = (self.value(*x).rows(), self.value(*x).cols());
                    let q = self.value(*w).cols();
                    if let Some(dx) = acc.buf(*x)? {
                        gemm(
                            T::one(),
                            View::matrix(g.data(), n, q),
                            View::matrix(self.value(*w).data(), p, q).t(),
                            T::one(),
                            ViewMut::matrix(dx, n, p),
                        );
                    }
                    if let Some(dw) = acc.buf(*w)? {
                        gemm(
                            T::one(),
                            View::matrix(self.value(*x).data(), n, p).t(),
                            View::matrix(g.data(), n, q),
                            T::one(),
                            ViewMut::matrix(dw, p, q),
                        );
                    }
                    if let Some(db) = acc.buf(*b)? {
                        for row in g.data().chunks(q) {
                            for (d, &r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = acc.buf(v)? {
                            add_into(d, g.data());
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if let Some(d) = acc.buf(*a)? {
                        for ((d, &gi), &o) in d.iter_mut().zip(g.data()).zip(bv) {
                            *d += gi * o;
                        }
                    }
                    if let Some(d) = acc.buf(*b)? {
                        for ((d, &gi), &o) in d.iter_mut().zip(g.data()).zip(av) {
                            *d += gi * o;
                        }
                    }
                }
                Op::Scale(x, factor) => {
                    if let Some(d) = acc.buf(*x)? {
                        for (d, &gi) in d.iter_mut().zip(g.data()) {
                            *d += gi * *factor;
                        }
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    if let Some(d) = acc.buf(*x)? {
                        for d in d.iter_mut() {
                            *d += s;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    if let Some(d) = acc.buf(*x)? {
                        for ((d, &gi), &xi) in d.iter_mut().zip(g.data()).zip(xv) {
                            let z = xi.as_f64();
                            *d += gi * T::lit(normal_cdf(z) + z * normal_pdf(z));
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let k = node.value.cols();
                    if let Some(d) = acc.buf(*x)? {
                        for ((drow, grow), yrow) in d.chunks_mut(k).zip(g.data().chunks(k)).zip(y.chunks(k)) {
                            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let h = node.value.cols();
                    let gam = self.value(*gamma).data();
                    if let Some(dx) = acc.buf(*x)? {
                        let hf = T::lit(h as f64);
                        for (((drow, grow), xrow), &r) in
                            dx.chunks_mut(h).zip(g.data().chunks(h)).zip(xhat.chunks(h)).zip(rstd)
                        {
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for j in 0..h {
                                let dxh = grow[j] * gam[j];
                                mean_d += dxh;
                                mean_dx += dxh * xrow[j];
                            }
                            mean_d /= hf;
                            mean_dx /= hf;
                            for j in 0..h {
                                let dxh = grow[j] * gam[j];
                                drow[j] += r * (dxh - mean_d - xrow[j] * mean_dx);
                            }
                        }
                    }
                    if let Some(dg) = acc.buf(*gamma)? {
                        for (grow, xrow) in g.data().chunks(h).zip(xhat.chunks(h)) {
                            for j in 0..h {
                                dg[j] += grow[j] * xrow[j];
                            }
                        }
                    }
                    if let Some(db) = acc.buf(*beta)? {
                        for grow in g.data().chunks(h) {
                            add_into(db, grow);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    keys,
                    probs,
                } => {
                    self.attention_backward(&mut acc, &g, *q, *k, *v, *heads, *keys, probs)?;
                }
                Op::SelectRows { x, rows } => {
                    let c = node.value.cols();
                    if let Some(d) = acc.buf(*x)? {
                        for (grow, &r) in g.data().chunks(c).zip(rows) {
                            add_into(&mut d[r * c..(r + 1) * c], grow);
                        }
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let k = self.value(*logits).cols();
                    let n = labels.len();
                    let s = g.data()[0] / T::lit(n as f64);
                    if let Some(d) = acc.buf(*logits)? {
                        for ((drow, prow), &label) in d.chunks_mut(k).zip(probs.chunks(k)).zip(labels) {
                            for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                                let target = if j == label { T::one() } else { T::zero() };
                                *d += s * (p - target);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        acc: &mut Acc<'_, T>,
        g: &Tensor<T>,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: usize,
        probs: &[T],
    ) -> Result<()> {
        let (n, h) = (g.rows(), g.cols());
        let dh = h / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dp = vec![T::zero(); n * keys];
        for head in 0..heads {
            let p = &probs[head * n * keys..(head + 1) * n * keys];
            let go = View::matrix(g.data(), n, h).col_block(head * dh, dh);
            if let Some(dv) = acc.buf(v)? {
                gemm(
                    T::one(),
                    View::matrix(p, n, keys).t(),
                    go,
                    T::one(),
                    ViewMut::matrix(dv, n, h).row_block(0, keys).col_block(head * dh, dh),
                );
            }
            if !(acc.wants(q) || acc.wants(k)) {
                continue;
            }
            let vh = View::matrix(vd, n, h).row_block(0, keys).col_block(head * dh, dh);
            gemm(T::one(), go, vh.t(), T::zero(), ViewMut::matrix(&mut dp, n, keys));
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)); masked entries have P = 0.
            for (drow, prow) in dp.chunks_mut(keys).zip(p.chunks(keys)) {
                let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (d, &pi) in drow.iter_mut().zip(prow) {
                    *d = pi * (*d - dot);
                }
            }
            if let Some(dq) = acc.buf(q)? {
                let kh = View::matrix(kd, n, h).row_block(0, keys).col_block(head * dh, dh);
                gemm(
                    scale,
                    View::matrix(&dp, n, keys),
                    kh,
                    T::one(),
                    ViewMut::matrix(dq, n, h).col_block(head * dh, dh),
                );
            }
            if let Some(dk) = acc.buf(k)? {
                let qh = View::matrix(qd, n, h).col_block(head * dh, dh);
                gemm(
                    scale,
                    View::matrix(&dp, n, keys).t(),
                    qh,
                    T::one(),
                    ViewMut::matrix(dk, n, h).row_block(0, keys).col_block(head * dh, dh),
                );
            }
        }
        Ok(())
    }
}

/// Gradient accumulator used during the reverse sweep.
struct Acc<'a, T> {
    tape: &'a Tape<T>,
    grads: &'a mut Vec<Option<Tensor<T>>>,
    at: usize,
}

impl<T: Real> Acc<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.tape.nodes[v.0].requires_grad
    }

    /// Zero-initialized (on first use) gradient buffer for `v`, or `None`
    /// when `v` needs no gradient.
    fn buf(&mut self, v: Var) -> Result<Option<&mut [T]>> {
        if v.0 >= self.at {
            return Err(Error::Internal(format!(
                "node {} consumes node {} which is not earlier on the tape",
                self.at, v.0
            )));
        }
        if !self.wants(v) {
            return Ok(None);
        }
        let slot = &mut self.grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.tape.value(v).shape()));
        }
        Ok(slot.as_mut().map(|t| t.data_mut()))
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn linear_of(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], x));
        let w = tape.constant(t(&[2, 2], w));
        let b = tape.constant(t(&[2], b));
        let y = tape.linear(x, w, b).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn linear_examples() {
        assert_eq!(linear_of(&[1., 2.], &[1., 0., 0., 1.], &[0., 0.]), vec![1., 2.]);
        assert_eq!(linear_of(&[1., 2.], &[0.; 4], &[3., 4.]), vec![3., 4.]);
        assert_eq!(linear_of(&[1., 2.], &[1., 2., 3., 4.], &[1., 1.]), vec![8., 11.]);
    }

    #[test]
    fn linear_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        match tape.linear(x, w, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {:?}", other.err()),
        }
    }

    #[test]
    fn gelu_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 10.0, 1.0]));
        let y = tape.gelu(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 10.0).abs() < 1e-6);
        assert!((v[2] - 0.84134).abs() < 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[0.0, 0.0, 7.5, 7.5 + 3f64.ln(), 1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y).data();
        assert!(close(&v[0..2], &[0.5, 0.5], 1e-12));
        assert!(close(&v[2..4], &[0.25, 0.75], 1e-12));
        assert!((v[4] - 1.0).abs() < 1e-12 && v[5] >= 0.0 && v[5] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[4.0, 4.0, 1.0, 3.0]));
        let g = tape.constant(t(&[2], &[1.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let v = tape.value(y).data();
        assert!(close(&v[0..2], &[0.0, 0.0], 1e-12));
        assert!(close(&v[2..4], &[-1.0, 1.0], 1e-3));

        let g0 = tape.constant(t(&[2], &[0.0, 0.0]));
        let b5 = tape.constant(t(&[2], &[5.0, 5.0]));
        let y = tape.layer_norm(x, g0, b5, 1e-5).unwrap();
        assert!(close(tape.value(y).data(), &[5.0; 4], 0.0));
    }

    fn identity_weights(tape: &mut Tape<f64>, h: usize) -> AttentionWeights {
        let mut eye = vec![0.0; h * h];
        for i in 0..h {
            eye[i * h + i] = 1.0;
        }
        let mut mk = |data: &[f64], shape: &[usize]| tape.constant(t(shape, data));
        AttentionWeights {
            wq: mk(&eye, &[h, h]),
            bq: mk(&vec![0.0; h], &[h]),
            wk: mk(&eye, &[h, h]),
            bk: mk(&vec![0.0; h], &[h]),
            wv: mk(&eye, &[h, h]),
            bv: mk(&vec![0.0; h], &[h]),
            wo: mk(&[0.5, 0.0, 1.0, -1.0], &[h, h]),
            bo: mk(&[0.1, 0.2], &[h]),
        }
    }

    #[test]
    fn self_only_mask_returns_projected_own_value() {
        let mut tape = Tape::new();
        let w = identity_weights(&mut tape, 2);
        let x = tape.constant(t(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]));
        let mask = AttentionMask::from_fn(3, |i, j| i == j);
        let y = tape.masked_attention(x, &w, &mask, 1).unwrap();
        // out = v_i · wo + bo with v_i = x_i
        let expected: Vec<f64> = [[1.0, 2.0], [-1.0, 0.5], [3.0, 3.0]]
            .iter()
            .flat_map(|r| [r[0] * 0.5 + r[1] * 1.0 + 0.1, -r[1] + 0.2])
            .collect();
        assert!(close(tape.value(y).data(), &expected, 1e-12));
    }

    #[test]
    fn identical_tokens_split_attention_evenly() {
        let mut tape = Tape::new();
        let q = tape.constant(t(&[2, 2], &[0.3, -0.7, 0.3, -0.7]));
        let a = tape.attention_core(q, q, q, &AttentionMask::full(2), 1).unwrap();
        let w = tape.attention_weights(a).unwrap();
        for row in &w[0] {
            assert!(close(row, &[0.5, 0.5], 1e-12));
        }
    }

    #[test]
    fn masked_token_does_not_influence_output() {
        let run = |b: [f64; 2]| {
            let mut tape = Tape::new();
            let w = identity_weights(&mut tape, 2);
            let x = tape.constant(t(&[2, 2], &[1.0, 2.0, b[0], b[1]]));
            // token 0 may not see token 1
            let mask = AttentionMask::from_fn(2, |i, j| i == 1 || j == 0);
            let y = tape.masked_attention(x, &w, &mask, 2).unwrap();
            tape.value(y).row(0).to_vec()
        };
        assert_eq!(run([0.0, 0.0]), run([100.0, -55.0]));
    }

    #[test]
    fn fully_masked_row_is_contract_violation() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(&[2, 2]));
        let mask = AttentionMask::from_fn(2, |i, _| i == 0);
        assert!(matches!(
            tape.attention_core(q, q, q, &mask, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = |logits: &[f64], label: usize| {
            let mut tape = Tape::new();
            let l = tape.constant(t(&[1, 2], logits));
            let y = tape.cross_entropy(l, &[label]).unwrap();
            tape.value(y).data()[0]
        };
        assert!(ce(&[20.0, -20.0], 0) < 1e-15);
        assert!((ce(&[0.0, 0.0], 0) - 2f64.ln()).abs() < 1e-12);
        assert!((ce(&[0.0, 0.0], 1) - 2f64.ln()).abs() < 1e-12);
        assert!((ce(&[0.0, 3f64.ln()], 1) + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(tape.cross_entropy(l, &[2]), Err(Error::Input(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[0.5, 0.5]));
        let b = tape.param(t(&[1], &[0.0]));
        let y = tape.linear(x, w, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);
    }
}
