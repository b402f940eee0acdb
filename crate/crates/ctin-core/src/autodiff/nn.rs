//! Neural-network layer ops: normalization, dropout, and the fused
//! bidirectional LSTM.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{LstmCache, LstmDirCache, LstmParamIds, NodeId, Op, Tape};
use super::tensor::Tensor;
use super::AutodiffError;

/// Per-channel running statistics for batch normalization. Persisted with the
/// parameters so evaluation is self-contained.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    /// Fresh stats: mean 0, variance 1 (eval-mode identity at init).
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    /// Fold freshly observed batch statistics in with the given momentum.
    pub fn update(&mut self, batch: &BnStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Whether stochastic layers (dropout) and batch statistics are live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Tape {
    /// Per-position normalization over the channel (last) axis followed by an
    /// affine map: `y = gain ⊙ (x − μ)/√(σ² + eps) + bias`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, AutodiffError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = *xv.shape().last().unwrap_or(&0);
        if xv.rank() < 1 || gv.shape() != [c] || bv.shape() != [c] {
            return Err(AutodiffError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.numel() / c;
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..rows {
            let xr = &xv.data()[r * c..(r + 1) * c];
            let mu = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let rstd = 1.0 / crate::fm::sqrt(var + eps);
            let orow = &mut out.data_mut()[r * c..(r + 1) * c];
            for j in 0..c {
                orow[j] = (xr[j] - mu) * rstd * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push_op(out, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Per-channel normalization over all positions.
    ///
    /// In train mode the batch statistics (population variance over the
    /// leading axes) normalize the result and are returned so the caller can
    /// fold them into `running` (momentum 0.1 at the standard call sites); in
    /// eval mode `running` itself normalizes. Train mode requires at least two
    /// positions per channel.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        running: &BnStats,
        mode: Mode,
        eps: f64,
    ) -> Result<(NodeId, Option<BnStats>), AutodiffError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = *xv.shape().last().unwrap_or(&0);
        if xv.rank() < 1 || gv.shape() != [c] || bv.shape() != [c] || running.mean.len() != c {
            return Err(AutodiffError::ShapeMismatch {
                op: "batch_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.numel() / c;
        let train = mode == Mode::Train;
        if train && rows < 2 {
            return Err(AutodiffError::BatchTooSmall { rows });
        }
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for j in 0..c {
                    mean[j] += xv.data()[r * c + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            for r in 0..rows {
                for j in 0..c {
                    let d = xv.data()[r * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };

        let mut out = Tensor::zeros(xv.shape());
        for j in 0..c {
            let rstd = 1.0 / crate::fm::sqrt(var[j] + eps);
            let (gj, bj) = (gv.data()[j], bv.data()[j]);
            for r in 0..rows {
                out.data_mut()[r * c + j] = (xv.data()[r * c + j] - mean[j]) * rstd * gj + bj;
            }
        }
        let batch_stats = train.then(|| BnStats { mean: mean.clone(), var: var.clone() });
        let id = self.push_op(out, Op::BatchNorm { x, gain, bias, eps, train, mean, var });
        Ok((id, batch_stats))
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `p` and survivors are scaled by `1/(1−p)`; eval mode is an exact
    /// identity (no node is recorded).
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut crate::rng::DetRng,
    ) -> NodeId {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        if mode == Mode::Eval || p == 0.0 {
            return x;
        }
        use rand::Rng;
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push_op(out, Op::Dropout { x, mask })
    }

    /// Fused 1-layer bidirectional LSTM over `x: (m, input)`, zero initial
    /// states, output `(m, 2·hidden)` with the forward direction in the first
    /// half of the channels.
    pub fn bilstm(
        &mut self,
        x: NodeId,
        p: LstmParamIds,
        hidden: usize,
    ) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || hidden == 0 {
            return Err(AutodiffError::BadRank { op: "bilstm", shape: xv.shape().to_vec() });
        }
        let (m, input) = (xv.shape()[0], xv.shape()[1]);
        for (wid, rows, cols) in [
            (p.w_ih_fwd, input, 4 * hidden),
            (p.w_hh_fwd, hidden, 4 * hidden),
            (p.w_ih_bwd, input, 4 * hidden),
            (p.w_hh_bwd, hidden, 4 * hidden),
        ] {
            if self.value(wid).shape() != [rows, cols] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "bilstm",
                    lhs: self.value(wid).shape().to_vec(),
                    rhs: vec![rows, cols],
                });
            }
        }
        let mut out = Tensor::zeros(&[m, 2 * hidden]);
        let fwd = self.lstm_direction(x, p.w_ih_fwd, p.w_hh_fwd, p.b_fwd, hidden, false, &mut out);
        let bwd = self.lstm_direction(x, p.w_ih_bwd, p.w_hh_bwd, p.b_bwd, hidden, true, &mut out);
        let cache = Box::new(LstmCache { fwd, bwd });
        Ok(self.push_op(out, Op::BiLstm { x, p, hidden, cache }))
    }

    fn lstm_direction(
        &self,
        x: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
        h: usize,
        reversed: bool,
        out: &mut Tensor,
    ) -> LstmDirCache {
        let xv = self.value(x);
        let w_ih = self.value(w_ih);
        let w_hh = self.value(w_hh);
        let bv = self.value(b);
        let (m, input) = (xv.shape()[0], xv.shape()[1]);
        let col0 = if reversed { h } else { 0 };

        let mut cache = LstmDirCache {
            gates: vec![0.0; m * 4 * h],
            c: vec![0.0; m * h],
            tc: vec![0.0; m * h],
        };
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut z = vec![0.0; 4 * h];
        for s in 0..m {
            let t = if reversed { m - 1 - s } else { s };
            z.copy_from_slice(bv.data());
            let xrow = &xv.data()[t * input..(t + 1) * input];
            for (a, &xa) in xrow.iter().enumerate() {
                if xa != 0.0 {
                    let wr = &w_ih.data()[a * 4 * h..(a + 1) * 4 * h];
                    for q in 0..4 * h {
                        z[q] += xa * wr[q];
                    }
                }
            }
            for (a, &ha) in hs.iter().enumerate() {
                if ha != 0.0 {
                    let wr = &w_hh.data()[a * 4 * h..(a + 1) * 4 * h];
                    for q in 0..4 * h {
                        z[q] += ha * wr[q];
                    }
                }
            }
            let gates = &mut cache.gates[s * 4 * h..(s + 1) * 4 * h];
            for q in 0..h {
                let ig = crate::fm::sigmoid(z[q]);
                let fg = crate::fm::sigmoid(z[h + q]);
                let gg = crate::fm::tanh(z[2 * h + q]);
                let og = crate::fm::sigmoid(z[3 * h + q]);
                gates[q] = ig;
                gates[h + q] = fg;
                gates[2 * h + q] = gg;
                gates[3 * h + q] = og;
                cs[q] = fg * cs[q] + ig * gg;
                let tc = crate::fm::tanh(cs[q]);
                cache.c[s * h + q] = cs[q];
                cache.tc[s * h + q] = tc;
                hs[q] = og * tc;
                out.data_mut()[t * 2 * h + col0 + q] = hs[q];
            }
        }
        cache
    }

    /// One LSTM step composed from primitive ops (shares the fused layer's
    /// weight layout; mainly a cross-check and a building block for tests).
    ///
    /// `x: (1, input)`, `h/c: (1, hidden)`; returns the new `(h, c)`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
        hidden: usize,
    ) -> Result<(NodeId, NodeId), AutodiffError> {
        let zx = self.matmul(x, w_ih)?;
        let zh = self.matmul(h_prev, w_hh)?;
        let zs = self.add(zx, zh)?;
        let z = self.add(zs, b)?;
        let zi = self.slice_channels(z, 0, hidden)?;
        let zf = self.slice_channels(z, hidden, hidden)?;
        let zg = self.slice_channels(z, 2 * hidden, hidden)?;
        let zo = self.slice_channels(z, 3 * hidden, hidden)?;
        let i = self.sigmoid(zi);
        let f = self.sigmoid(zf);
        let g = self.tanh(zg);
        let o = self.sigmoid(zo);
        let fc = self.mul(f, c_prev)?;
        let ig = self.mul(i, g)?;
        let c = self.add(fc, ig)?;
        let tc = self.tanh(c);
        let h = self.mul(o, tc)?;
        Ok((h, c))
    }
}
