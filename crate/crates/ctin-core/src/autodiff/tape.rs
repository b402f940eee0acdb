//! The reverse-mode value graph.
//!
//! A [`Tape`] is an append-only arena of [`DiffNode`]s; node indices are handed
//! out as [`NodeId`]s and parents always precede children, so creation order is
//! a topological order. [`Tape::backward`] sweeps the tape once in reverse,
//! propagating adjoints through a per-call workspace and accumulating them into
//! the stored gradients of `requires_grad` leaves — repeated calls therefore
//! accumulate additively, and each node is visited exactly once per call.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// LSTM parameter handles for one bidirectional layer.
///
/// Weight layout: `w_ih: (input, 4·hidden)`, `w_hh: (hidden, 4·hidden)`,
/// `b: (4·hidden)`, gate column order `[input, forget, cell, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParamIds {
    pub w_ih_fwd: NodeId,
    pub w_hh_fwd: NodeId,
    pub b_fwd: NodeId,
    pub w_ih_bwd: NodeId,
    pub w_hh_bwd: NodeId,
    pub b_bwd: NodeId,
}

/// Per-direction activations cached by the fused BiLSTM forward pass.
#[derive(Clone, Debug)]
pub(crate) struct LstmDirCache {
    /// `(steps × 4H)` gate activations in processing order.
    pub gates: Vec<f64>,
    /// `(steps × H)` cell states in processing order.
    pub c: Vec<f64>,
    /// `(steps × H)` tanh of cell states in processing order.
    pub tc: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct LstmCache {
    pub fwd: LstmDirCache,
    pub bwd: LstmDirCache,
}

/// Operation record; parents always have smaller ids than the node itself.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Bmm { a: NodeId, b: NodeId, transpose_b: bool },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, groups: usize },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Softmax(NodeId),
    SoftmaxCausal(NodeId),
    Concat(NodeId, NodeId),
    SliceTime { x: NodeId, start: usize },
    SliceChannels { x: NodeId, start: usize },
    SplitHeads(NodeId),
    MergeHeads(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    CumsumTime(NodeId),
    ScaleRows { x: NodeId, w: NodeId },
    RepeatRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    BatchNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64, train: bool, mean: Vec<f64>, var: Vec<f64> },
    Dropout { x: NodeId, mask: Vec<f64> },
    BiLstm { x: NodeId, p: LstmParamIds, hidden: usize, cache: Box<LstmCache> },
}

impl Op {
    /// Parent ids, used by the generic reverse sweep.
    fn parents(&self, out: &mut Vec<NodeId>) {
        out.clear();
        match *self {
            Op::Leaf => {}
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::Concat(a, b) => {
                out.push(a);
                out.push(b);
            }
            Op::Bmm { a, b, .. } => {
                out.push(a);
                out.push(b);
            }
            Op::Conv1d { x, w, b, .. } => {
                out.push(x);
                out.push(w);
                out.push(b);
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clamp { x: a, .. }
            | Op::Softmax(a)
            | Op::SoftmaxCausal(a)
            | Op::SliceTime { x: a, .. }
            | Op::SliceChannels { x: a, .. }
            | Op::SplitHeads(a)
            | Op::MergeHeads(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::CumsumTime(a)
            | Op::RepeatRows(a)
            | Op::Dropout { x: a, .. } => out.push(a),
            Op::ScaleRows { x, w } => {
                out.push(x);
                out.push(w);
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                out.push(x);
                out.push(gain);
                out.push(bias);
            }
            Op::BatchNorm { x, gain, bias, .. } => {
                out.push(x);
                out.push(gain);
                out.push(bias);
            }
            Op::BiLstm { x, p, .. } => {
                out.push(x);
                out.push(p.w_ih_fwd);
                out.push(p.w_hh_fwd);
                out.push(p.b_fwd);
                out.push(p.w_ih_bwd);
                out.push(p.w_hh_bwd);
                out.push(p.b_bwd);
            }
        }
    }
}

/// One node of the value graph: forward value, gradient accumulator, and the
/// operation record used by the backward pass.
#[derive(Clone, Debug)]
pub struct DiffNode {
    pub(crate) value: Tensor,
    pub(crate) grad: Option<Tensor>,
    pub(crate) requires_grad: bool,
    /// True when a gradient must flow through this node (itself flagged or
    /// any ancestor is).
    pub(crate) needs_grad: bool,
    pub(crate) op: Op,
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<DiffNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mount a value as a graph input. Gradients accumulate on it iff
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad, requires_grad)
    }

    /// Mount a value that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(DiffNode { value, grad: None, requires_grad, needs_grad, op });
        id
    }

    pub(crate) fn push_op(&mut self, value: Tensor, op: Op) -> NodeId {
        let mut parents = Vec::new();
        op.parents(&mut parents);
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, false, needs)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a `requires_grad` leaf; `None` before any
    /// backward call or for interior nodes.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Clear all stored gradients.
    pub fn zero_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
    }

    /// Reverse sweep from a scalar loss. Adjoints are propagated through a
    /// per-call workspace and added into the stored gradients of every
    /// `requires_grad` ancestor, so repeated calls accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].value.rank() != 0 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut ws: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        ws[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if ws[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            if self.nodes[i].requires_grad {
                let g = ws[i].as_ref().unwrap();
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = ws[i].take().unwrap();
            self.propagate(i, &g, &mut ws);
        }
        Ok(())
    }

    /// Add `contrib` into the workspace slot of `id` if gradients flow there.
    fn accum(&self, ws: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        debug_assert_eq!(contrib.shape(), self.nodes[id.0].value.shape());
        match &mut ws[id.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, ws: &mut [Option<Tensor>]) {
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        let needs = |id: NodeId| -> bool { self.nodes[id.0].needs_grad };
        let out = &self.nodes[i].value;

        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                if needs(*a) {
                    self.accum(ws, *a, g.clone());
                }
                if needs(*b) {
                    self.accum(ws, *b, reduce_to(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    self.accum(ws, *a, g.clone());
                }
                if needs(*b) {
                    let mut r = reduce_to(g, val(*b).shape());
                    r.scale_assign(-1.0);
                    self.accum(ws, *b, r);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    bcast_combine(g, bv, ga.data_mut(), |gi, bi| gi * bi);
                    self.accum(ws, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    bcast_reduce(g, av, gb.data_mut(), |gi, ai| gi * ai);
                    self.accum(ws, *b, gb);
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    bcast_combine(g, bv, ga.data_mut(), |gi, bi| gi / bi);
                    self.accum(ws, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    let bn = bv.numel();
                    for (idx, (gi, ai)) in g.data().iter().zip(av.data()).enumerate() {
                        let bi = bv.data()[idx % bn];
                        gb.data_mut()[idx % bn] += -gi * ai / (bi * bi);
                    }
                    self.accum(ws, *b, gb);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let mut ga = g.clone();
                    ga.scale_assign(*c);
                    self.accum(ws, *a, ga);
                }
            }
            Op::AddScalar(a) => {
                if needs(*a) {
                    self.accum(ws, *a, g.clone());
                }
            }

            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    gemm_nt(g.data(), bv.data(), ga.data_mut(), m, n, k);
                    self.accum(ws, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    gemm_tn(av.data(), g.data(), gb.data_mut(), k, m, n);
                    self.accum(ws, *b, gb);
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (av, bv) = (val(*a), val(*b));
                let batches = av.shape()[0];
                let (m, k) = (av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let (asz, bsz, osz) = (m * k, bv.shape()[1] * bv.shape()[2], m * n);
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for bt in 0..batches {
                        let gs = &g.data()[bt * osz..(bt + 1) * osz];
                        let bs = &bv.data()[bt * bsz..(bt + 1) * bsz];
                        let gas = &mut ga.data_mut()[bt * asz..(bt + 1) * asz];
                        if *transpose_b {
                            // C = A·Bᵀ ⇒ dA = dC·B, with B (n,k).
                            gemm_nn(gs, bs, gas, m, n, k);
                        } else {
                            gemm_nt(gs, bs, gas, m, n, k);
                        }
                    }
                    self.accum(ws, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for bt in 0..batches {
                        let gs = &g.data()[bt * osz..(bt + 1) * osz];
                        let as_ = &av.data()[bt * asz..(bt + 1) * asz];
                        let gbs = &mut gb.data_mut()[bt * bsz..(bt + 1) * bsz];
                        if *transpose_b {
                            // dB = dCᵀ·A, result (n,k).
                            gemm_tn(gs, as_, gbs, n, m, k);
                        } else {
                            gemm_tn(as_, gs, gbs, k, m, n);
                        }
                    }
                    self.accum(ws, *b, gb);
                }
            }

            Op::Conv1d { x, w, b, groups } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, cin) = (xv.shape()[0], xv.shape()[1]);
                let cout = wv.shape()[0];
                let cpg = wv.shape()[1];
                let kk = wv.shape()[2];
                let pad = kk / 2;
                let oc_per_g = cout / groups;
                if needs(*x) {
                    let mut gx = Tensor::zeros(xv.shape());
                    let gxd = gx.data_mut();
                    for t in 0..m {
                        for oc in 0..cout {
                            let gi = g.data()[t * cout + oc];
                            if gi == 0.0 {
                                continue;
                            }
                            let ic0 = (oc / oc_per_g) * cpg;
                            for kq in 0..kk {
                                let ti = t as isize + kq as isize - pad as isize;
                                if ti < 0 || ti >= m as isize {
                                    continue;
                                }
                                let ti = ti as usize;
                                for j in 0..cpg {
                                    gxd[ti * cin + ic0 + j] += gi * wv.data()[(oc * cpg + j) * kk + kq];
                                }
                            }
                        }
                    }
                    self.accum(ws, *x, gx);
                }
                if needs(*w) {
                    let mut gw = Tensor::zeros(wv.shape());
                    let gwd = gw.data_mut();
                    for t in 0..m {
                        for oc in 0..cout {
                            let gi = g.data()[t * cout + oc];
                            if gi == 0.0 {
                                continue;
                            }
                            let ic0 = (oc / oc_per_g) * cpg;
                            for kq in 0..kk {
                                let ti = t as isize + kq as isize - pad as isize;
                                if ti < 0 || ti >= m as isize {
                                    continue;
                                }
                                let ti = ti as usize;
                                for j in 0..cpg {
                                    gwd[(oc * cpg + j) * kk + kq] += gi * xv.data()[ti * cin + ic0 + j];
                                }
                            }
                        }
                    }
                    self.accum(ws, *w, gw);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(val(*b).shape());
                    for t in 0..m {
                        for oc in 0..cout {
                            gb.data_mut()[oc] += g.data()[t * cout + oc];
                        }
                    }
                    self.accum(ws, *b, gb);
                }
            }

            Op::Relu(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.shape());
                    for ((o, &gi), &xi) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o = if xi > 0.0 { gi } else { 0.0 };
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let mut ga = Tensor::zeros(out.shape());
                    for ((o, &gi), &yi) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o = gi * yi * (1.0 - yi);
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    let mut ga = Tensor::zeros(out.shape());
                    for ((o, &gi), &yi) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o = gi * (1.0 - yi * yi);
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Softplus(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.shape());
                    for ((o, &gi), &xi) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o = gi * crate::fm::sigmoid(xi);
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Exp(a) => {
                if needs(*a) {
                    let mut ga = Tensor::zeros(out.shape());
                    for ((o, &gi), &yi) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o = gi * yi;
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Log(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.shape());
                    for ((o, &gi), &xi) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o = gi / xi;
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if needs(*x) {
                    let xv = val(*x);
                    let mut ga = Tensor::zeros(xv.shape());
                    for ((o, &gi), &xi) in ga.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o = if xi > *lo && xi < *hi { gi } else { 0.0 };
                    }
                    self.accum(ws, *x, ga);
                }
            }

            Op::Softmax(a) | Op::SoftmaxCausal(a) => {
                if needs(*a) {
                    let c = *out.shape().last().unwrap();
                    let rows = out.numel() / c;
                    let mut ga = Tensor::zeros(out.shape());
                    for r in 0..rows {
                        let y = &out.data()[r * c..(r + 1) * c];
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        let o = &mut ga.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            o[j] = y[j] * (gr[j] - dot);
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }

            Op::Concat(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (ca, cb) = (av.shape()[1], bv.shape()[1]);
                let rows = av.shape()[0];
                let c = ca + cb;
                if needs(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for r in 0..rows {
                        ga.data_mut()[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data()[r * c..r * c + ca]);
                    }
                    self.accum(ws, *a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for r in 0..rows {
                        gb.data_mut()[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g.data()[r * c + ca..(r + 1) * c]);
                    }
                    self.accum(ws, *b, gb);
                }
            }

            Op::SliceTime { x, start } => {
                if needs(*x) {
                    let xv = val(*x);
                    let c = xv.shape()[1];
                    let len = out.shape()[0];
                    let mut gx = Tensor::zeros(xv.shape());
                    gx.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                    self.accum(ws, *x, gx);
                }
            }
            Op::SliceChannels { x, start } => {
                if needs(*x) {
                    let xv = val(*x);
                    let c = xv.shape()[1];
                    let len = out.shape()[1];
                    let rows = xv.shape()[0];
                    let mut gx = Tensor::zeros(xv.shape());
                    for r in 0..rows {
                        gx.data_mut()[r * c + start..r * c + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    self.accum(ws, *x, gx);
                }
            }

            Op::SplitHeads(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let (m, d) = (av.shape()[0], av.shape()[1]);
                    let h = out.shape()[0];
                    let dk = d / h;
                    let mut ga = Tensor::zeros(av.shape());
                    for hh in 0..h {
                        for t in 0..m {
                            for q in 0..dk {
                                ga.data_mut()[t * d + hh * dk + q] += g.data()[(hh * m + t) * dk + q];
                            }
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::MergeHeads(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let (h, m, dk) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let d = h * dk;
                    let mut ga = Tensor::zeros(av.shape());
                    for hh in 0..h {
                        for t in 0..m {
                            for q in 0..dk {
                                ga.data_mut()[(hh * m + t) * dk + q] += g.data()[t * d + hh * dk + q];
                            }
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }

            Op::Transpose(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let (r, c) = (av.shape()[0], av.shape()[1]);
                    let mut ga = Tensor::zeros(av.shape());
                    for i in 0..r {
                        for j in 0..c {
                            ga.data_mut()[i * c + j] = g.data()[j * r + i];
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    let ga = g.clone().reshaped(val(*a).shape());
                    self.accum(ws, *a, ga);
                }
            }

            Op::Mean(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let gi = g.scalar_value() / av.numel() as f64;
                    self.accum(ws, *a, Tensor::filled(av.shape(), gi));
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let av = val(*a);
                    self.accum(ws, *a, Tensor::filled(av.shape(), g.scalar_value()));
                }
            }
            Op::CumsumTime(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let (m, c) = (av.shape()[0], av.shape()[1]);
                    let mut ga = Tensor::zeros(av.shape());
                    let mut run = vec![0.0; c];
                    for t in (0..m).rev() {
                        for j in 0..c {
                            run[j] += g.data()[t * c + j];
                            ga.data_mut()[t * c + j] = run[j];
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }

            Op::ScaleRows { x, w } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, c) = (xv.shape()[0], xv.shape()[1]);
                if needs(*x) {
                    let mut gx = Tensor::zeros(xv.shape());
                    for t in 0..m {
                        let wt = wv.data()[t];
                        for j in 0..c {
                            gx.data_mut()[t * c + j] = g.data()[t * c + j] * wt;
                        }
                    }
                    self.accum(ws, *x, gx);
                }
                if needs(*w) {
                    let mut gw = Tensor::zeros(wv.shape());
                    for t in 0..m {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g.data()[t * c + j] * xv.data()[t * c + j];
                        }
                        gw.data_mut()[t] = s;
                    }
                    self.accum(ws, *w, gw);
                }
            }
            Op::RepeatRows(a) => {
                if needs(*a) {
                    let av = val(*a);
                    let c = av.shape()[1];
                    let times = out.shape()[0];
                    let mut ga = Tensor::zeros(av.shape());
                    for t in 0..times {
                        for j in 0..c {
                            ga.data_mut()[j] += g.data()[t * c + j];
                        }
                    }
                    self.accum(ws, *a, ga);
                }
            }

            Op::LayerNorm { x, gain, bias, eps } => {
                let (xv, gv) = (val(*x), val(*gain));
                let c = *xv.shape().last().unwrap();
                let rows = xv.numel() / c;
                let mut gx = needs(*x).then(|| Tensor::zeros(xv.shape()));
                let mut gg = needs(*gain).then(|| Tensor::zeros(gv.shape()));
                let mut gb = needs(*bias).then(|| Tensor::zeros(gv.shape()));
                for r in 0..rows {
                    let xr = &xv.data()[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let mu = xr.iter().sum::<f64>() / c as f64;
                    let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                    let rstd = 1.0 / crate::fm::sqrt(var + eps);
                    if let Some(gbv) = gb.as_mut() {
                        for j in 0..c {
                            gbv.data_mut()[j] += gr[j];
                        }
                    }
                    if let Some(ggv) = gg.as_mut() {
                        for j in 0..c {
                            ggv.data_mut()[j] += gr[j] * (xr[j] - mu) * rstd;
                        }
                    }
                    if let Some(gxv) = gx.as_mut() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let gh = gr[j] * gv.data()[j];
                            let xh = (xr[j] - mu) * rstd;
                            m1 += gh;
                            m2 += gh * xh;
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let gh = gr[j] * gv.data()[j];
                            let xh = (xr[j] - mu) * rstd;
                            gxv.data_mut()[r * c + j] = rstd * (gh - m1 - xh * m2);
                        }
                    }
                }
                if let Some(t) = gx {
                    self.accum(ws, *x, t);
                }
                if let Some(t) = gg {
                    self.accum(ws, *gain, t);
                }
                if let Some(t) = gb {
                    self.accum(ws, *bias, t);
                }
            }

            Op::BatchNorm { x, gain, bias, eps, train, mean, var } => {
                let (xv, gv) = (val(*x), val(*gain));
                let c = *xv.shape().last().unwrap();
                let rows = xv.numel() / c;
                let mut gx = needs(*x).then(|| Tensor::zeros(xv.shape()));
                let mut gg = needs(*gain).then(|| Tensor::zeros(gv.shape()));
                let mut gb = needs(*bias).then(|| Tensor::zeros(gv.shape()));
                for j in 0..c {
                    let rstd = 1.0 / crate::fm::sqrt(var[j] + eps);
                    let mut sg = 0.0;
                    let mut sgx = 0.0;
                    for r in 0..rows {
                        let gi = g.data()[r * c + j];
                        let xh = (xv.data()[r * c + j] - mean[j]) * rstd;
                        sg += gi;
                        sgx += gi * xh;
                    }
                    if let Some(t) = gb.as_mut() {
                        t.data_mut()[j] = sg;
                    }
                    if let Some(t) = gg.as_mut() {
                        t.data_mut()[j] = sgx;
                    }
                    if let Some(t) = gx.as_mut() {
                        let gj = gv.data()[j];
                        if *train {
                            let m1 = sg / rows as f64;
                            let m2 = sgx / rows as f64;
                            for r in 0..rows {
                                let gi = g.data()[r * c + j];
                                let xh = (xv.data()[r * c + j] - mean[j]) * rstd;
                                t.data_mut()[r * c + j] = gj * rstd * (gi - m1 - xh * m2);
                            }
                        } else {
                            for r in 0..rows {
                                t.data_mut()[r * c + j] = g.data()[r * c + j] * gj * rstd;
                            }
                        }
                    }
                }
                if let Some(t) = gx {
                    self.accum(ws, *x, t);
                }
                if let Some(t) = gg {
                    self.accum(ws, *gain, t);
                }
                if let Some(t) = gb {
                    self.accum(ws, *bias, t);
                }
            }

            Op::Dropout { x, mask } => {
                if needs(*x) {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    for ((o, &gi), &mi) in gx.data_mut().iter_mut().zip(g.data()).zip(mask.iter()) {
                        *o = gi * mi;
                    }
                    self.accum(ws, *x, gx);
                }
            }

            Op::BiLstm { x, p, hidden, cache } => {
                self.bilstm_backward(g, out, *x, p, *hidden, cache, ws);
            }
        }
    }

    /// Truncated-nowhere BPTT through the fused bidirectional layer.
    #[allow(clippy::too_many_arguments)]
    fn bilstm_backward(
        &self,
        g: &Tensor,
        out: &Tensor,
        x: NodeId,
        p: &LstmParamIds,
        h: usize,
        cache: &LstmCache,
        ws: &mut [Option<Tensor>],
    ) {
        let xv = &self.nodes[x.0].value;
        let (m, input) = (xv.shape()[0], xv.shape()[1]);
        let mut gx = Tensor::zeros(xv.shape());

        for (dir, dc) in [(0usize, &cache.fwd), (1usize, &cache.bwd)] {
            let (w_ih_id, w_hh_id, b_id) = if dir == 0 {
                (p.w_ih_fwd, p.w_hh_fwd, p.b_fwd)
            } else {
                (p.w_ih_bwd, p.w_hh_bwd, p.b_bwd)
            };
            let w_ih = &self.nodes[w_ih_id.0].value;
            let w_hh = &self.nodes[w_hh_id.0].value;
            let mut gw_ih = Tensor::zeros(w_ih.shape());
            let mut gw_hh = Tensor::zeros(w_hh.shape());
            let mut gb = Tensor::zeros(&[4 * h]);

            // Processing order: step s handles time index `row(s)`.
            let row = |s: usize| -> usize {
                if dir == 0 {
                    s
                } else {
                    m - 1 - s
                }
            };
            let col0 = dir * h; // this direction's slice of the (m, 2H) output

            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            for s in (0..m).rev() {
                let t = row(s);
                let gates = &dc.gates[s * 4 * h..(s + 1) * 4 * h];
                let tc = &dc.tc[s * h..(s + 1) * h];
                for q in 0..h {
                    let dh = g.data()[t * 2 * h + col0 + q] + dh_next[q];
                    let (ig, fg, gg, og) = (gates[q], gates[h + q], gates[2 * h + q], gates[3 * h + q]);
                    let c_prev = if s == 0 { 0.0 } else { dc.c[(s - 1) * h + q] };
                    let d_o = dh * tc[q];
                    let d_c = dc_next[q] + dh * og * (1.0 - tc[q] * tc[q]);
                    let d_i = d_c * gg;
                    let d_f = d_c * c_prev;
                    let d_g = d_c * ig;
                    dc_next[q] = d_c * fg;
                    dz[q] = d_i * ig * (1.0 - ig);
                    dz[h + q] = d_f * fg * (1.0 - fg);
                    dz[2 * h + q] = d_g * (1.0 - gg * gg);
                    dz[3 * h + q] = d_o * og * (1.0 - og);
                }
                // Parameter and input gradients for this step.
                for q in 0..4 * h {
                    gb.data_mut()[q] += dz[q];
                }
                let xrow = &xv.data()[t * input..(t + 1) * input];
                for (a, &xa) in xrow.iter().enumerate() {
                    if xa != 0.0 {
                        let wr = &mut gw_ih.data_mut()[a * 4 * h..(a + 1) * 4 * h];
                        for q in 0..4 * h {
                            wr[q] += xa * dz[q];
                        }
                    }
                }
                if s > 0 {
                    let tp = row(s - 1);
                    let hrow = &out.data()[tp * 2 * h + col0..tp * 2 * h + col0 + h];
                    for (a, &ha) in hrow.iter().enumerate() {
                        if ha != 0.0 {
                            let wr = &mut gw_hh.data_mut()[a * 4 * h..(a + 1) * 4 * h];
                            for q in 0..4 * h {
                                wr[q] += ha * dz[q];
                            }
                        }
                    }
                }
                // dx[t] += dz · W_ihᵀ ; dh_prev = dz · W_hhᵀ.
                let gxrow = &mut gx.data_mut()[t * input..(t + 1) * input];
                for a in 0..input {
                    let wr = &w_ih.data()[a * 4 * h..(a + 1) * 4 * h];
                    let mut s_ = 0.0;
                    for q in 0..4 * h {
                        s_ += dz[q] * wr[q];
                    }
                    gxrow[a] += s_;
                }
                for a in 0..h {
                    let wr = &w_hh.data()[a * 4 * h..(a + 1) * 4 * h];
                    let mut s_ = 0.0;
                    for q in 0..4 * h {
                        s_ += dz[q] * wr[q];
                    }
                    dh_next[a] = s_;
                }
            }
            self.accum(ws, w_ih_id, gw_ih);
            self.accum(ws, w_hh_id, gw_hh);
            self.accum(ws, b_id, gb);
        }
        if self.nodes[x.0].needs_grad {
            self.accum(ws, x, gx);
        }
    }
}

/// Sum `src` down to `target_shape`, which must be a trailing suffix of the
/// source shape (broadcast adjoint).
fn reduce_to(src: &Tensor, target_shape: &[usize]) -> Tensor {
    if src.shape() == target_shape {
        return src.clone();
    }
    let mut out = Tensor::zeros(target_shape);
    let n = out.numel().max(1);
    for (i, &v) in src.data().iter().enumerate() {
        out.data_mut()[i % n] += v;
    }
    out
}

/// `out[i] = f(g[i], other[i % other_len])` — adjoint for the broadcast side’s
/// counterpart.
fn bcast_combine(g: &Tensor, other: &Tensor, out: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    let n = other.numel().max(1);
    for (i, (&gi, o)) in g.data().iter().zip(out.iter_mut()).enumerate() {
        *o = f(gi, other.data()[i % n]);
    }
}

/// `out[i % out_len] += f(g[i], other[i])` — adjoint reduced onto the
/// broadcast operand.
fn bcast_reduce(g: &Tensor, other: &Tensor, out: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    let n = out.len().max(1);
    for (i, (&gi, &oi)) in g.data().iter().zip(other.data()).enumerate() {
        out[i % n] += f(gi, oi);
    }
}
