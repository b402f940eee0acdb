//! Forward constructors for the recorded operations.
//!
//! Every method validates shapes, computes the forward value, and appends a
//! node whose backward rule lives in `tape.rs`. Elementwise binary ops allow
//! the right operand to broadcast when its shape is a trailing suffix of the
//! left one (this covers bias rows, per-batch constants, and scalars).

use alloc::vec::Vec;

use super::tape::{NodeId, Op, Tape};
use super::tensor::{gemm_nn, gemm_nt, Tensor};
use super::AutodiffError;

fn suffix_broadcast_ok(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

impl Tape {
    fn check_bcast(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (ls, rs) = (self.value(a).shape(), self.value(b).shape());
        if suffix_broadcast_ok(ls, rs) {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch { op, lhs: ls.to_vec(), rhs: rs.to_vec() })
        }
    }

    fn elementwise_bcast(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        self.check_bcast(op_name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.numel().max(1);
        let mut out = Tensor::zeros(av.shape());
        for (i, (o, &x)) in out.data_mut().iter_mut().zip(av.data()).enumerate() {
            *o = f(x, bv.data()[i % n]);
        }
        Ok(self.push_op(out, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise_bcast("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise_bcast("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise_bcast("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise_bcast("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale_assign(c);
        self.push_op(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x += c);
        self.push_op(out, Op::AddScalar(a))
    }

    /// `(m,k) · (k,n) → (m,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(av.data(), bv.data(), out.data_mut(), m, k, n);
        Ok(self.push_op(out, Op::MatMul(a, b)))
    }

    /// Batched matmul over rank-3 operands: `(B,m,k)·(B,k,n) → (B,m,n)`, or
    /// with `transpose_b`, `(B,m,k)·(B,n,k) → (B,m,n)`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let ok = av.rank() == 3
            && bv.rank() == 3
            && av.shape()[0] == bv.shape()[0]
            && if transpose_b {
                av.shape()[2] == bv.shape()[2]
            } else {
                av.shape()[2] == bv.shape()[1]
            };
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "bmm",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let batches = av.shape()[0];
        let (m, k) = (av.shape()[1], av.shape()[2]);
        let n = if transpose_b { bv.shape()[1] } else { bv.shape()[2] };
        let (asz, bsz, osz) = (m * k, bv.shape()[1] * bv.shape()[2], m * n);
        let mut out = Tensor::zeros(&[batches, m, n]);
        for bt in 0..batches {
            let as_ = &av.data()[bt * asz..(bt + 1) * asz];
            let bs = &bv.data()[bt * bsz..(bt + 1) * bsz];
            let os = &mut out.data_mut()[bt * osz..(bt + 1) * osz];
            if transpose_b {
                gemm_nt(as_, bs, os, m, k, n);
            } else {
                gemm_nn(as_, bs, os, m, k, n);
            }
        }
        Ok(self.push_op(out, Op::Bmm { a, b, transpose_b }))
    }

    /// Temporal convolution, stride 1, zero same-padding.
    ///
    /// `x: (m, c_in)`, `w: (c_out, c_in/groups, k)` with `k` odd, `b: (c_out)`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        groups: usize,
    ) -> Result<NodeId, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ok = xv.rank() == 2
            && wv.rank() == 3
            && bv.rank() == 1
            && groups > 0
            && xv.shape()[1] % groups == 0
            && wv.shape()[0] % groups == 0
            && wv.shape()[1] == xv.shape()[1] / groups
            && wv.shape()[2] % 2 == 1
            && bv.shape()[0] == wv.shape()[0];
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let (m, cin) = (xv.shape()[0], xv.shape()[1]);
        let (cout, cpg, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        let pad = k / 2;
        let oc_per_g = cout / groups;
        let mut out = Tensor::zeros(&[m, cout]);
        for t in 0..m {
            let orow = &mut out.data_mut()[t * cout..(t + 1) * cout];
            for (oc, o) in orow.iter_mut().enumerate() {
                let ic0 = (oc / oc_per_g) * cpg;
                let mut s = bv.data()[oc];
                for kq in 0..k {
                    let ti = t as isize + kq as isize - pad as isize;
                    if ti < 0 || ti >= m as isize {
                        continue;
                    }
                    let xrow = &xv.data()[ti as usize * cin + ic0..ti as usize * cin + ic0 + cpg];
                    let wrow = &wv.data()[oc * cpg * k + kq..];
                    for (j, &xj) in xrow.iter().enumerate() {
                        s += xj * wrow[j * k];
                    }
                }
                *o = s;
            }
        }
        Ok(self.push_op(out, Op::Conv1d { x, w, b, groups }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| {
            if *x < 0.0 {
                *x = 0.0
            }
        });
        self.push_op(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = crate::fm::sigmoid(*x));
        self.push_op(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = crate::fm::tanh(*x));
        self.push_op(out, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = crate::fm::softplus(*x));
        self.push_op(out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = crate::fm::exp(*x));
        self.push_op(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = crate::fm::ln(*x));
        self.push_op(out, Op::Log(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.min(hi).max(lo));
        self.push_op(out, Op::Clamp { x: a, lo, hi })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() == 0 {
            return Err(AutodiffError::BadRank { op: "softmax", shape: av.shape().to_vec() });
        }
        let c = *av.shape().last().unwrap();
        let rows = av.numel() / c;
        let mut out = av.clone();
        for r in 0..rows {
            softmax_row(&mut out.data_mut()[r * c..(r + 1) * c]);
        }
        Ok(self.push_op(out, Op::Softmax(a)))
    }

    /// Causal softmax over the last axis of `(h, m, m)` score stacks: row `i`
    /// distributes over columns `0..=i`, future columns get exactly zero.
    pub fn softmax_causal(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 3 || av.shape()[1] != av.shape()[2] {
            return Err(AutodiffError::BadRank { op: "softmax_causal", shape: av.shape().to_vec() });
        }
        let (h, m) = (av.shape()[0], av.shape()[1]);
        let mut out = Tensor::zeros(av.shape());
        for hh in 0..h {
            for i in 0..m {
                let base = (hh * m + i) * m;
                let row = &av.data()[base..base + i + 1];
                let orow = &mut out.data_mut()[base..base + i + 1];
                orow.copy_from_slice(row);
                softmax_row(orow);
            }
        }
        Ok(self.push_op(out, Op::SoftmaxCausal(a)))
    }

    /// Concatenate along the channel (last) axis, rank-2 operands.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[0] != bv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let rows = av.shape()[0];
        let (ca, cb) = (av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[rows, ca + cb]);
        for r in 0..rows {
            out.data_mut()[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.data_mut()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        Ok(self.push_op(out, Op::Concat(a, b)))
    }

    /// Rows `start..start+len` of a rank-2 `(time, channel)` array.
    pub fn slice_time(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 || start + len > av.shape()[0] {
            return Err(AutodiffError::BadSlice {
                op: "slice_time",
                shape: av.shape().to_vec(),
                start,
                len,
            });
        }
        let c = av.shape()[1];
        let data = av.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push_op(Tensor::from_vec(&[len, c], data), Op::SliceTime { x: a, start }))
    }

    /// Columns `start..start+len` of a rank-2 array.
    pub fn slice_channels(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 || start + len > av.shape()[1] {
            return Err(AutodiffError::BadSlice {
                op: "slice_channels",
                shape: av.shape().to_vec(),
                start,
                len,
            });
        }
        let (rows, c) = (av.shape()[0], av.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * c + start..r * c + start + len]);
        }
        Ok(self.push_op(Tensor::from_vec(&[rows, len], data), Op::SliceChannels { x: a, start }))
    }

    /// `(m, d) → (heads, m, d/heads)` head-major view for per-head attention.
    pub fn split_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 || heads == 0 || av.shape()[1] % heads != 0 {
            return Err(AutodiffError::BadRank { op: "split_heads", shape: av.shape().to_vec() });
        }
        let (m, d) = (av.shape()[0], av.shape()[1]);
        let dk = d / heads;
        let mut out = Tensor::zeros(&[heads, m, dk]);
        for hh in 0..heads {
            for t in 0..m {
                let src = &av.data()[t * d + hh * dk..t * d + (hh + 1) * dk];
                out.data_mut()[(hh * m + t) * dk..(hh * m + t + 1) * dk].copy_from_slice(src);
            }
        }
        Ok(self.push_op(out, Op::SplitHeads(a)))
    }

    /// Inverse of [`Tape::split_heads`]: `(h, m, dk) → (m, h·dk)`.
    pub fn merge_heads(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 3 {
            return Err(AutodiffError::BadRank { op: "merge_heads", shape: av.shape().to_vec() });
        }
        let (h, m, dk) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let d = h * dk;
        let mut out = Tensor::zeros(&[m, d]);
        for hh in 0..h {
            for t in 0..m {
                let src = &av.data()[(hh * m + t) * dk..(hh * m + t + 1) * dk];
                out.data_mut()[t * d + hh * dk..t * d + (hh + 1) * dk].copy_from_slice(src);
            }
        }
        Ok(self.push_op(out, Op::MergeHeads(a)))
    }

    /// Rank-2 transpose (time ↔ channel).
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(AutodiffError::BadRank { op: "transpose", shape: av.shape().to_vec() });
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j * r + i] = av.data()[i * c + j];
            }
        }
        Ok(self.push_op(out, Op::Transpose(a)))
    }

    /// Same data, new shape (equal element count).
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.numel() {
            return Err(AutodiffError::NumelMismatch {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = av.clone().reshaped(shape);
        Ok(self.push_op(out, Op::Reshape(a)))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.numel() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum over all elements, producing a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push_op(Tensor::scalar(s), Op::Sum(a))
    }

    /// Inclusive running sum down the time axis of a rank-2 array.
    pub fn cumsum_time(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(AutodiffError::BadRank { op: "cumsum_time", shape: av.shape().to_vec() });
        }
        let (m, c) = (av.shape()[0], av.shape()[1]);
        let mut out = av.clone();
        for t in 1..m {
            for j in 0..c {
                let prev = out.data()[(t - 1) * c + j];
                out.data_mut()[t * c + j] += prev;
            }
        }
        Ok(self.push_op(out, Op::CumsumTime(a)))
    }

    /// Row-wise rescale: `out[t, c] = x[t, c] · w[t]` with `w` rank-1.
    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, AutodiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rank() != 2 || wv.rank() != 1 || wv.shape()[0] != xv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_rows",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let (m, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = xv.clone();
        for t in 0..m {
            let wt = wv.data()[t];
            out.data_mut()[t * c..(t + 1) * c].iter_mut().for_each(|v| *v *= wt);
        }
        Ok(self.push_op(out, Op::ScaleRows { x, w }))
    }

    /// Tile a `(1, c)` row `times` times into `(times, c)`.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 || av.shape()[0] != 1 {
            return Err(AutodiffError::BadRank { op: "repeat_rows", shape: av.shape().to_vec() });
        }
        let c = av.shape()[1];
        let mut out = Tensor::zeros(&[times, c]);
        for t in 0..times {
            out.data_mut()[t * c..(t + 1) * c].copy_from_slice(av.data());
        }
        Ok(self.push_op(out, Op::RepeatRows(a)))
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = crate::fm::exp(*v - mx);
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(&[2, 5], 3.7));
        let y = t.softmax(x).unwrap();
        for &v in t.value(y).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_kernel_conv_preserves_input() {
        let mut rng = crate::rng::root(21);
        let x = Tensor::uniform(&[7, 3], 1.0, &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 3]);
        // One-hot center tap mapping channel c -> channel c.
        for c in 0..3 {
            w.data_mut()[(c * 3 + c) * 3 + 1] = 1.0;
        }
        let mut t = Tape::new();
        let xid = t.constant(x.clone());
        let wid = t.constant(w);
        let bid = t.constant(Tensor::zeros(&[3]));
        let y = t.conv1d(xid, wid, bid, 1).unwrap();
        for (a, b) in t.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[4, 2]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn causal_softmax_rows_sum_to_one_and_mask_is_exact() {
        let mut rng = crate::rng::root(22);
        let mut t = Tape::new();
        let x = t.constant(Tensor::uniform(&[2, 4, 4], 2.0, &mut rng));
        let y = t.softmax_causal(x).unwrap();
        let v = t.value(y);
        for hh in 0..2 {
            for i in 0..4 {
                let row = &v.data()[(hh * 4 + i) * 4..(hh * 4 + i + 1) * 4];
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                for (j, &e) in row.iter().enumerate() {
                    if j > i {
                        assert_eq!(e, 0.0);
                    } else {
                        assert!(e > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn split_merge_heads_round_trip() {
        let mut rng = crate::rng::root(23);
        let x = Tensor::uniform(&[5, 6], 1.0, &mut rng);
        let mut t = Tape::new();
        let a = t.constant(x.clone());
        let s = t.split_heads(a, 3).unwrap();
        assert_eq!(t.value(s).shape(), &[3, 5, 2]);
        let m = t.merge_heads(s).unwrap();
        assert_eq!(t.value(m), &x);
    }

    #[test]
    fn cumsum_matches_running_total() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[&[1.0, 10.0], &[2.0, 20.0], &[3.0, 30.0]]));
        let y = t.cumsum_time(x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 10.0, 3.0, 30.0, 6.0, 60.0]);
    }
}
