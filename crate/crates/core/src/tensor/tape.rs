//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.
//! The heavier kernels (multi-head attention, graph attention, layer norm,
//! cross entropy) are fused ops with hand-written backward passes.

#![allow(clippy::needless_range_loop)]

use std::rc::Rc;

use super::matrix::{gemm, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inclusive row range `[start, end]` inside a stacked hidden block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RowSpan {
    pub start: usize,
    pub end: usize,
}

impl RowSpan {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "empty row span {start}..={end}");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, row: usize) -> bool {
        (self.start..=self.end).contains(&row)
    }
}

/// One block of queries attending to one block of keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

/// Receiver-major adjacency: `in_neighbors[i]` lists the senders node `i`
/// attends over.
pub type Adjacency = Rc<Vec<Vec<usize>>>;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a @ b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Elu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<AttnSegment>,
        probs: Vec<Vec<f64>>,
    },
    SpanMean {
        x: Var,
        spans: Vec<Option<RowSpan>>,
    },
    ScatterAdd {
        x: Var,
        src: Var,
        spans: Vec<Option<RowSpan>>,
    },
    GraphAttention {
        h: Var,
        a_src: Var,
        a_dst: Var,
        heads: usize,
        slope: f64,
        adjacency: Adjacency,
        pre: Vec<Vec<Vec<f64>>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
        denom: f64,
    },
    Sum(Var),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Rc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Rc<Matrix>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Records a shared matrix without copying it.
    pub fn shared(&mut self, m: &Rc<Matrix>, requires_grad: bool) -> Var {
        self.push_shared(Rc::clone(m), Op::Leaf, requires_grad)
    }

    /// Moves the value out of the tape when no one else holds it.
    pub fn into_value(mut self, v: Var) -> Matrix {
        let rc = std::mem::replace(&mut self.nodes[v.0].value, Rc::new(Matrix::zeros(0, 0)));
        drop(self);
        Rc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_t shape mismatch");
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        gemm(
            av.rows(),
            av.cols(),
            bv.rows(),
            1.0,
            (av.data(), av.cols(), 1),
            (bv.data(), 1, bv.cols()),
            0.0,
            (out.data_mut(), bv.rows(), 1),
        );
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds the `1 x n` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row expects a single row");
        assert_eq!(rv.cols(), self.value(x).cols(), "add_row width mismatch");
        let r = rv.data().to_vec();
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(out, Op::AddRow(x, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(&[x]);
        self.push(out, Op::Elu(x), rg)
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or 1).
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Var {
        if p <= 0.0 {
            return x;
        }
        let (r, c) = self.value(x).shape();
        assert_eq!(keep.len(), r * c, "dropout mask size mismatch");
        let s = 1.0 / (1.0 - p);
        let mask = Matrix::from_vec(r, c, keep.iter().map(|&k| if k { s } else { 0.0 }).collect());
        let m = self.constant(mask);
        self.mul(x, m)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        assert_eq!(g.len(), cols, "layer norm gain width");
        assert_eq!(b.len(), cols, "layer norm bias width");
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..cols {
                let h = (row[j] - mean) * rs;
                xhat.set(i, j, h);
                out.set(i, j, h * g[j] + b[j]);
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Scaled dot-product attention with `heads` heads over column blocks.
    ///
    /// Every segment maps a block of query rows onto a block of key/value
    /// rows; rows outside all segments produce zeros. With `causal`, query
    /// `i` of a segment sees keys `0..=i` of that segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<AttnSegment>,
        causal: bool,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(kv.cols(), d, "attention key width");
        assert_eq!(vv.cols(), d, "attention value width");
        assert_eq!(kv.rows(), vv.rows(), "attention key/value rows");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(qv.rows(), d);
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in &segments {
            assert!(seg.q_start + seg.q_len <= qv.rows(), "query segment out of range");
            assert!(seg.k_start + seg.k_len <= kv.rows(), "key segment out of range");
            for h in 0..heads {
                let mut s = vec![0.0; seg.q_len * seg.k_len];
                let off_q = seg.q_start * d + h * dh;
                let off_k = seg.k_start * d + h * dh;
                gemm(
                    seg.q_len,
                    dh,
                    seg.k_len,
                    scale,
                    (&qv.data()[off_q..], d, 1),
                    (&kv.data()[off_k..], 1, d),
                    0.0,
                    (&mut s, seg.k_len, 1),
                );
                for i in 0..seg.q_len {
                    let row = &mut s[i * seg.k_len..(i + 1) * seg.k_len];
                    let visible = if causal { (i + 1).min(seg.k_len) } else { seg.k_len };
                    softmax_prefix(row, visible);
                }
                gemm(
                    seg.q_len,
                    seg.k_len,
                    dh,
                    1.0,
                    (&s, seg.k_len, 1),
                    (&vv.data()[off_k..], d, 1),
                    0.0,
                    (&mut out.data_mut()[off_q..], d, 1),
                );
                probs.push(s);
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            },
            rg,
        )
    }

    /// Mean of `x` rows over each span; `None` spans yield zero rows.
    pub fn span_mean(&mut self, x: Var, spans: &[Option<RowSpan>]) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(spans.len(), xv.cols());
        for (n, span) in spans.iter().enumerate() {
            if let Some(sp) = span {
                assert!(sp.end < xv.rows(), "span {sp:?} outside block of {} rows", xv.rows());
                let inv = 1.0 / sp.len() as f64;
                let dst = out.row_mut(n);
                for r in sp.start..=sp.end {
                    for (o, v) in dst.iter_mut().zip(xv.row(r)) {
                        *o += v;
                    }
                }
                for o in dst.iter_mut() {
                    *o *= inv;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::SpanMean {
                x,
                spans: spans.to_vec(),
            },
            rg,
        )
    }

    /// `x` plus row `n` of `src` broadcast over every row of span `n`.
    /// Rows covered by no span are copied unchanged.
    pub fn scatter_add(&mut self, x: Var, src: Var, spans: &[Option<RowSpan>]) -> Var {
        let (xv, sv) = (self.value(x), self.value(src));
        assert_eq!(sv.rows(), spans.len(), "scatter source rows vs spans");
        assert_eq!(sv.cols(), xv.cols(), "scatter width mismatch");
        let mut out = xv.clone();
        for (n, span) in spans.iter().enumerate() {
            if let Some(sp) = span {
                assert!(sp.end < out.rows(), "span {sp:?} outside block of {} rows", out.rows());
                for r in sp.start..=sp.end {
                    for (o, v) in out.row_mut(r).iter_mut().zip(sv.row(n)) {
                        *o += v;
                    }
                }
            }
        }
        let rg = self.rg(&[x, src]);
        self.push(
            out,
            Op::ScatterAdd {
                x,
                src,
                spans: spans.to_vec(),
            },
            rg,
        )
    }

    /// Multi-head graph attention aggregation.
    ///
    /// `h` is the projected node matrix (`n x d`), `a_src`/`a_dst` are
    /// `heads x d/heads`. For receiver `i` and head `k` the coefficients over
    /// `adjacency[i]` are `softmax_j(leaky_relu(a_dst·h_i + a_src·h_j))`; the
    /// output row is the coefficient-weighted sum of sender rows, heads
    /// concatenated. Receivers without senders get a zero row.
    pub fn graph_attention(
        &mut self,
        h: Var,
        a_src: Var,
        a_dst: Var,
        heads: usize,
        adjacency: Adjacency,
        slope: f64,
    ) -> Var {
        let (hv, asv, adv) = (self.value(h), self.value(a_src), self.value(a_dst));
        let (n, d) = hv.shape();
        assert_eq!(adjacency.len(), n, "adjacency size vs node count");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        assert_eq!(asv.shape(), (heads, dh), "a_src shape");
        assert_eq!(adv.shape(), (heads, dh), "a_dst shape");
        let (s_src, s_dst) = head_scores(hv, asv, adv, heads);
        let mut out = Matrix::zeros(n, d);
        let mut pre = Vec::with_capacity(heads);
        for k in 0..heads {
            let mut pre_k = Vec::with_capacity(n);
            for (i, senders) in adjacency.iter().enumerate() {
                let z: Vec<f64> = senders
                    .iter()
                    .map(|&j| s_dst[i * heads + k] + s_src[j * heads + k])
                    .collect();
                let mut a: Vec<f64> = z.iter().map(|&v| leaky(v, slope)).collect();
                let len = a.len();
                softmax_prefix(&mut a, len);
                let dst = &mut out.row_mut(i)[k * dh..(k + 1) * dh];
                for (&j, &w) in senders.iter().zip(&a) {
                    for (o, x) in dst.iter_mut().zip(&hv.row(j)[k * dh..(k + 1) * dh]) {
                        *o += w * x;
                    }
                }
                pre_k.push(z);
            }
            pre.push(pre_k);
        }
        let rg = self.rg(&[h, a_src, a_dst]);
        self.push(
            out,
            Op::GraphAttention {
                h,
                a_src,
                a_dst,
                heads,
                slope,
                adjacency,
                pre,
            },
            rg,
        )
    }

    /// Attention coefficients of a graph-attention node, indexed
    /// `[head][receiver][position in adjacency list]`.
    pub fn graph_attention_coefficients(&self, v: Var) -> Option<Vec<Vec<Vec<f64>>>> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { pre, slope, .. } => Some(
                pre.iter()
                    .map(|per_head| {
                        per_head
                            .iter()
                            .map(|z| {
                                let mut a: Vec<f64> = z.iter().map(|&x| leaky(x, *slope)).collect();
                                let len = a.len();
                                softmax_prefix(&mut a, len);
                                a
                            })
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Weighted mean token cross entropy; returns a `1 x 1` value.
    /// An all-zero weight vector yields a loss of exactly zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        assert_eq!(targets.len(), rows, "one target per logit row");
        assert_eq!(weights.len(), rows, "one weight per logit row");
        let mut probs = Matrix::zeros(rows, cols);
        let mut total = 0.0;
        let denom: f64 = weights.iter().sum();
        for i in 0..rows {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            if weights[i] != 0.0 {
                total += weights[i] * (log_z - row[targets[i]]);
            }
        }
        let loss = if denom > 0.0 { total / denom } else { 0.0 };
        let rg = self.rg(&[logits]);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                denom,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop(&node.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop(&self, op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    // dA = G @ B^T
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(
                        g.rows(),
                        g.cols(),
                        bv.rows(),
                        1.0,
                        (g.data(), g.cols(), 1),
                        (bv.data(), 1, bv.cols()),
                        0.0,
                        (da.data_mut(), av.cols(), 1),
                    );
                    accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    // dB = A^T @ G
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(
                        av.cols(),
                        av.rows(),
                        g.cols(),
                        1.0,
                        (av.data(), 1, av.cols()),
                        (g.data(), g.cols(), 1),
                        0.0,
                        (db.data_mut(), bv.cols(), 1),
                    );
                    accumulate(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    // dA = G @ B
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(
                        g.rows(),
                        g.cols(),
                        bv.cols(),
                        1.0,
                        (g.data(), g.cols(), 1),
                        (bv.data(), bv.cols(), 1),
                        0.0,
                        (da.data_mut(), av.cols(), 1),
                    );
                    accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    // dB = G^T @ A
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(
                        g.cols(),
                        g.rows(),
                        av.cols(),
                        1.0,
                        (g.data(), 1, g.cols()),
                        (av.data(), av.cols(), 1),
                        0.0,
                        (db.data_mut(), bv.cols(), 1),
                    );
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(x, row) => {
                if self.requires_grad(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.requires_grad(*row) {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *row, dr);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), d));
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, Matrix::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(grads, *x, Matrix::from_vec(g.rows(), g.cols(), d));
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { gv * v.exp() })
                    .collect();
                accumulate(grads, *x, Matrix::from_vec(g.rows(), g.cols(), d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let mut dg = Matrix::zeros(1, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            dg.data_mut()[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    accumulate(grads, *gain, dg);
                }
                if self.requires_grad(*bias) {
                    let mut db = Matrix::zeros(1, cols);
                    for i in 0..rows {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
                if self.requires_grad(*x) {
                    let mut dx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for i in 0..rows {
                        let dxhat: Vec<f64> = (0..cols).map(|j| g.get(i, j) * gv[j]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat.row(i)).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            let v = rstd[i] / n * (n * dxhat[j] - sum_d - xhat.get(i, j) * sum_dx);
                            dx.set(i, j, v);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Matrix::zeros(qv.rows(), d);
                let mut dk = Matrix::zeros(kv.rows(), d);
                let mut dv = Matrix::zeros(vv.rows(), d);
                for (si, seg) in segments.iter().enumerate() {
                    for h in 0..*heads {
                        let p = &probs[si * heads + h];
                        let off_q = seg.q_start * d + h * dh;
                        let off_k = seg.k_start * d + h * dh;
                        let go = &g.data()[off_q..];
                        // dV += P^T dO
                        gemm(
                            seg.k_len,
                            seg.q_len,
                            dh,
                            1.0,
                            (p, 1, seg.k_len),
                            (go, d, 1),
                            1.0,
                            (&mut dv.data_mut()[off_k..], d, 1),
                        );
                        // dP = dO V^T
                        let mut dp = vec![0.0; seg.q_len * seg.k_len];
                        gemm(
                            seg.q_len,
                            dh,
                            seg.k_len,
                            1.0,
                            (go, d, 1),
                            (&vv.data()[off_k..], 1, d),
                            0.0,
                            (&mut dp, seg.k_len, 1),
                        );
                        // dS = P * (dP - rowsum(dP * P))
                        for i in 0..seg.q_len {
                            let pr = &p[i * seg.k_len..(i + 1) * seg.k_len];
                            let dr = &mut dp[i * seg.k_len..(i + 1) * seg.k_len];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (x, &pv) in dr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot);
                            }
                        }
                        // dQ += scale * dS K
                        gemm(
                            seg.q_len,
                            seg.k_len,
                            dh,
                            scale,
                            (&dp, seg.k_len, 1),
                            (&kv.data()[off_k..], d, 1),
                            1.0,
                            (&mut dq.data_mut()[off_q..], d, 1),
                        );
                        // dK += scale * dS^T Q
                        gemm(
                            seg.k_len,
                            seg.q_len,
                            dh,
                            scale,
                            (&dp, 1, seg.k_len),
                            (&qv.data()[off_q..], d, 1),
                            1.0,
                            (&mut dk.data_mut()[off_k..], d, 1),
                        );
                    }
                }
                if self.requires_grad(*q) {
                    accumulate(grads, *q, dq);
                }
                if self.requires_grad(*k) {
                    accumulate(grads, *k, dk);
                }
                if self.requires_grad(*v) {
                    accumulate(grads, *v, dv);
                }
            }
            Op::SpanMean { x, spans } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (n, span) in spans.iter().enumerate() {
                    if let Some(sp) = span {
                        let inv = 1.0 / sp.len() as f64;
                        for r in sp.start..=sp.end {
                            for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(n)) {
                                *d += v * inv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ScatterAdd { x, src, spans } => {
                if self.requires_grad(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.requires_grad(*src) {
                    let sv = self.value(*src);
                    let mut ds = Matrix::zeros(sv.rows(), sv.cols());
                    for (n, span) in spans.iter().enumerate() {
                        if let Some(sp) = span {
                            for r in sp.start..=sp.end {
                                for (d, v) in ds.row_mut(n).iter_mut().zip(g.row(r)) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    accumulate(grads, *src, ds);
                }
            }
            Op::GraphAttention {
                h,
                a_src,
                a_dst,
                heads,
                slope,
                adjacency,
                pre,
            } => {
                let (hv, asv, adv) = (self.value(*h), self.value(*a_src), self.value(*a_dst));
                let (n, d) = hv.shape();
                let dh = d / heads;
                let mut dhm = Matrix::zeros(n, d);
                let mut das = Matrix::zeros(*heads, dh);
                let mut dad = Matrix::zeros(*heads, dh);
                for k in 0..*heads {
                    let mut ds_src = vec![0.0; n];
                    let mut ds_dst = vec![0.0; n];
                    for (i, senders) in adjacency.iter().enumerate() {
                        if senders.is_empty() {
                            continue;
                        }
                        let z = &pre[k][i];
                        let mut alpha: Vec<f64> = z.iter().map(|&v| leaky(v, *slope)).collect();
                        let len = alpha.len();
                        softmax_prefix(&mut alpha, len);
                        let go = &g.row(i)[k * dh..(k + 1) * dh];
                        // out_i = sum_j alpha_ij h_j
                        let mut dalpha = Vec::with_capacity(len);
                        for (&j, &a) in senders.iter().zip(&alpha) {
                            let hj = &hv.row(j)[k * dh..(k + 1) * dh];
                            dalpha.push(go.iter().zip(hj).map(|(x, y)| x * y).sum::<f64>());
                            for (dst, gv) in dhm.row_mut(j)[k * dh..(k + 1) * dh].iter_mut().zip(go) {
                                *dst += a * gv;
                            }
                        }
                        let dot: f64 = alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                        for (t, &j) in senders.iter().enumerate() {
                            let de = alpha[t] * (dalpha[t] - dot);
                            let dz = if z[t] > 0.0 { de } else { de * slope };
                            ds_dst[i] += dz;
                            ds_src[j] += dz;
                        }
                    }
                    // s_src[j] = h_j · a_src[k], s_dst[i] = h_i · a_dst[k]
                    for j in 0..n {
                        let hj = &hv.row(j)[k * dh..(k + 1) * dh];
                        let (gs, gd) = (ds_src[j], ds_dst[j]);
                        if gs == 0.0 && gd == 0.0 {
                            continue;
                        }
                        for t in 0..dh {
                            let cell = &mut dhm.row_mut(j)[k * dh + t];
                            *cell += gs * asv.get(k, t) + gd * adv.get(k, t);
                            das.data_mut()[k * dh + t] += gs * hj[t];
                            dad.data_mut()[k * dh + t] += gd * hj[t];
                        }
                    }
                }
                if self.requires_grad(*h) {
                    accumulate(grads, *h, dhm);
                }
                if self.requires_grad(*a_src) {
                    accumulate(grads, *a_src, das);
                }
                if self.requires_grad(*a_dst) {
                    accumulate(grads, *a_dst, dad);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
                denom,
            } => {
                if *denom <= 0.0 {
                    return;
                }
                let gs = g.get(0, 0);
                let mut dl = Matrix::zeros(probs.rows(), probs.cols());
                for i in 0..probs.rows() {
                    let w = weights[i];
                    if w == 0.0 {
                        continue;
                    }
                    let c = gs * w / denom;
                    for (d, p) in dl.row_mut(i).iter_mut().zip(probs.row(i)) {
                        *d = c * p;
                    }
                    dl.row_mut(i)[targets[i]] -= c;
                }
                accumulate(grads, *logits, dl);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.get(0, 0)));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// In-place softmax over `row[..visible]`; entries past `visible` become 0.
fn softmax_prefix(row: &mut [f64], visible: usize) {
    if visible == 0 {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let max = row[..visible].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in &mut row[..visible] {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in &mut row[..visible] {
        *x /= sum;
    }
    for x in &mut row[visible..] {
        *x = 0.0;
    }
}

/// Per-node, per-head source and destination attention scores, laid out
/// `[node * heads + head]`.
fn head_scores(h: &Matrix, a_src: &Matrix, a_dst: &Matrix, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = h.shape();
    let dh = d / heads;
    let mut s_src = vec![0.0; n * heads];
    let mut s_dst = vec![0.0; n * heads];
    for i in 0..n {
        for k in 0..heads {
            let hi = &h.row(i)[k * dh..(k + 1) * dh];
            s_src[i * heads + k] = hi.iter().zip(a_src.row(k)).map(|(a, b)| a * b).sum();
            s_dst[i * heads + k] = hi.iter().zip(a_dst.row(k)).map(|(a, b)| a * b).sum();
        }
    }
    (s_src, s_dst)
}
