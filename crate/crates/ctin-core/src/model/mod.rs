//! The CTIN network: spatial/temporal embeddings, a spatial encoder built
//! from local and global self-attention, a causal temporal decoder with
//! cross-attention to the encoder output, and velocity/covariance heads.
//!
//! Architecture notes pinned here because the code depends on them:
//!
//! - All convolutions are 1D over time with stride 1 and zero same-padding,
//!   so the encoder preserves temporal length and decoder cross-attention
//!   aligns per timestep.
//! - Local self-attention enriches keys with a grouped kernel-3 convolution
//!   (`C1`), scores positions with a ReLU of a 1×1 projection of `[X; C1]`
//!   normalized over time per head, aggregates values into a per-head global
//!   context (`C2`), and fuses `C1`/`C2` with a two-way softmax gate.
//! - Decoder sub-layers are wrapped as `y = x + LN(dropout(sublayer(x)))`;
//!   with the sub-layer output projections zero-initialized this makes the
//!   whole decoder an exact identity at init, so the freshly initialized
//!   model reduces to `heads(temporal_embed(imu))`.
//! - Weight init: uniform ±1/√fan_in for every linear/conv weight; residual
//!   output projections and the fusion gate start at zero; the LSTM forget
//!   gate bias starts at 1.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{
    AutodiffError, BnStats, LstmParamIds, Mode, NodeId, ParamStore, Tape, Tensor,
};
use crate::pipeline::Window;
use crate::rng::DetRng;

/// Network hyperparameters. Defaults are the desk-scale configuration.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Window length m.
    pub window_len: usize,
    pub input_channels: usize,
    /// Model width d; must be divisible by `heads`.
    pub model_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    /// Hidden units per LSTM direction (the two directions concatenate).
    pub lstm_hidden: usize,
    pub dropout_encoder: f64,
    pub dropout_decoder: f64,
    /// Local-attention context kernel; odd.
    pub local_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_len: 200,
            input_channels: 6,
            model_dim: 64,
            heads: 8,
            encoder_layers: 1,
            decoder_layers: 4,
            ffn_dim: 256,
            lstm_hidden: 32,
            dropout_encoder: 0.5,
            dropout_decoder: 0.05,
            local_kernel: 3,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for tests and gradient checks.
    pub fn toy(window_len: usize, model_dim: usize, heads: usize) -> Self {
        Self {
            window_len,
            input_channels: 6,
            model_dim,
            heads,
            encoder_layers: 1,
            decoder_layers: 2,
            ffn_dim: model_dim * 4,
            lstm_hidden: (model_dim / 2).max(1),
            dropout_encoder: 0.5,
            dropout_decoder: 0.05,
            local_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.window_len < 2 || self.input_channels == 0 || self.model_dim == 0 {
            return Err(ModelError::Config("window, channel, and model dims must be positive"));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(ModelError::Config("model_dim must be divisible by heads"));
        }
        if self.local_kernel % 2 == 0 || self.local_kernel == 0 {
            return Err(ModelError::Config("local_kernel must be odd"));
        }
        if self.model_dim % self.local_groups() != 0 {
            return Err(ModelError::Config("model_dim must be divisible by the group count"));
        }
        if self.lstm_hidden == 0 || self.ffn_dim == 0 {
            return Err(ModelError::Config("hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_encoder) || !(0.0..1.0).contains(&self.dropout_decoder) {
            return Err(ModelError::Config("dropout probabilities must lie in [0, 1)"));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(ModelError::Config("need at least one encoder and decoder layer"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    fn local_groups(&self) -> usize {
        self.heads
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(&'static str),
    #[error("input shape {got:?} does not match the configured window ({want:?})")]
    InputShape { got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-timestamp 2D velocity with a strictly positive diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityEstimate {
    /// `(m, 2)` m/s.
    pub vel: Tensor,
    /// `(m, 2)` variances, (m/s)².
    pub cov_diag: Tensor,
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    pub vel: NodeId,
    pub cov: NodeId,
    /// Recorded attention distributions (softmax outputs), by site name.
    pub attention: Vec<(String, NodeId)>,
    /// Batch statistics observed by train-mode batch-norm sites, in
    /// execution order; fold into the store with momentum 0.1.
    pub bn_updates: Vec<(String, BnStats)>,
}

/// Momentum used when folding observed batch statistics into running stats.
pub const BN_MOMENTUM: f64 = 0.1;

const COV_LOG_CLAMP: f64 = 10.0;

pub struct CtinModel {
    cfg: ModelConfig,
}

/// Everything one forward pass needs, bundled to keep signatures readable.
struct Fx<'a> {
    tape: &'a mut Tape,
    bound: &'a BTreeMap<String, NodeId>,
    store: &'a ParamStore,
    mode: Mode,
    rng: &'a mut DetRng,
    attention: Vec<(String, NodeId)>,
    bn_updates: Vec<(String, BnStats)>,
}

impl Fx<'_> {
    fn p(&self, name: &str) -> Result<NodeId, ModelError> {
        self.bound
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Autodiff(AutodiffError::UnknownParam(name.into())))
    }

    fn linear(&mut self, x: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let xw = self.tape.matmul(x, w)?;
        Ok(self.tape.add(xw, b)?)
    }

    fn conv(&mut self, x: NodeId, prefix: &str, groups: usize) -> Result<NodeId, ModelError> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        Ok(self.tape.conv1d(x, w, b, groups)?)
    }

    fn layer_norm(&mut self, x: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let gain = self.p(&format!("{prefix}.gain"))?;
        let bias = self.p(&format!("{prefix}.bias"))?;
        Ok(self.tape.layer_norm(x, gain, bias, 1e-5)?)
    }

    fn batch_norm(&mut self, x: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let gain = self.p(&format!("{prefix}.gain"))?;
        let bias = self.p(&format!("{prefix}.bias"))?;
        let running = self.store.bn_stats(prefix)?;
        let (out, batch) = self.tape.batch_norm(x, gain, bias, &running, self.mode, 1e-5)?;
        if let Some(stats) = batch {
            self.bn_updates.push((prefix.into(), stats));
        }
        Ok(out)
    }

    fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        self.tape.dropout(x, p, self.mode, self.rng)
    }

    fn record(&mut self, name: String, attn: NodeId) {
        self.attention.push((name, attn));
    }
}

impl CtinModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Initialize a parameter store for this configuration.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let cfg = &self.cfg;
        let mut rng = crate::rng::stream(seed, 0x1417);
        let mut store = ParamStore::new();
        let (d, m) = (cfg.model_dim, cfg.window_len);
        let cin = cfg.input_channels;
        let h = cfg.lstm_hidden;

        let lin = |store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut DetRng| {
            let bound = 1.0 / crate::fm::sqrt(fan_in as f64);
            store.insert(&format!("{prefix}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng));
            store.insert(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
        };
        let zero_lin = |store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize| {
            store.insert(&format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]));
            store.insert(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
        };
        let conv = |store: &mut ParamStore, prefix: &str, cout: usize, cpg: usize, k: usize, rng: &mut DetRng| {
            let bound = 1.0 / crate::fm::sqrt((cpg * k) as f64);
            store.insert(&format!("{prefix}.w"), Tensor::uniform(&[cout, cpg, k], bound, rng));
            store.insert(&format!("{prefix}.b"), Tensor::zeros(&[cout]));
        };
        let norm = |store: &mut ParamStore, prefix: &str, c: usize| {
            store.insert(&format!("{prefix}.gain"), Tensor::filled(&[c], 1.0));
            store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[c]));
        };
        let bn = |store: &mut ParamStore, prefix: &str, c: usize| {
            norm(store, prefix, c);
            store.insert_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[c]));
            store.insert_buffer(&format!("{prefix}.running_var"), Tensor::filled(&[c], 1.0));
        };
        let lstm_dir = |store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut DetRng| {
            let bi = 1.0 / crate::fm::sqrt(input as f64);
            let bh = 1.0 / crate::fm::sqrt(hidden as f64);
            store.insert(&format!("{prefix}.w_ih"), Tensor::uniform(&[input, 4 * hidden], bi, rng));
            store.insert(&format!("{prefix}.w_hh"), Tensor::uniform(&[hidden, 4 * hidden], bh, rng));
            let mut b = Tensor::zeros(&[4 * hidden]);
            for q in hidden..2 * hidden {
                b.data_mut()[q] = 1.0; // forget-gate bias
            }
            store.insert(&format!("{prefix}.b"), b);
        };

        conv(&mut store, "embed.spatial.conv", d, cin, 3, &mut rng);
        bn(&mut store, "embed.spatial.bn", d);
        lin(&mut store, "embed.spatial.lin", d, d, &mut rng);

        lstm_dir(&mut store, "embed.temporal.lstm.fw", cin, h, &mut rng);
        lstm_dir(&mut store, "embed.temporal.lstm.bw", cin, h, &mut rng);
        lin(&mut store, "embed.temporal.lin", 2 * h, d, &mut rng);
        store.insert("embed.temporal.pos", Tensor::zeros(&[m, d]));

        for i in 0..cfg.encoder_layers {
            let p = format!("encoder.block{i}");
            lin(&mut store, &format!("{p}.reduce"), d, d, &mut rng);
            bn(&mut store, &format!("{p}.bn1"), d);
            conv(
                &mut store,
                &format!("{p}.local.ctx"),
                d,
                d / cfg.local_groups(),
                cfg.local_kernel,
                &mut rng,
            );
            lin(&mut store, &format!("{p}.local.score"), 2 * d, cfg.heads, &mut rng);
            lin(&mut store, &format!("{p}.local.value"), d, d, &mut rng);
            zero_lin(&mut store, &format!("{p}.local.gate"), 2 * d, 2);
            bn(&mut store, &format!("{p}.bn2"), d);
            for proj in ["wq", "wk", "wv"] {
                lin(&mut store, &format!("{p}.global.{proj}"), d, d, &mut rng);
            }
            lin(&mut store, &format!("{p}.global.out"), d, d, &mut rng);
            bn(&mut store, &format!("{p}.bn3"), d);
            zero_lin(&mut store, &format!("{p}.expand"), d, d);
        }

        for i in 0..cfg.decoder_layers {
            let p = format!("decoder.layer{i}");
            for site in ["self", "cross"] {
                for proj in ["wq", "wk", "wv"] {
                    lin(&mut store, &format!("{p}.{site}.{proj}"), d, d, &mut rng);
                }
                zero_lin(&mut store, &format!("{p}.{site}.out"), d, d);
                norm(&mut store, &format!("{p}.{site}.ln"), d);
            }
            lin(&mut store, &format!("{p}.ffn.in"), d, cfg.ffn_dim, &mut rng);
            zero_lin(&mut store, &format!("{p}.ffn.out"), cfg.ffn_dim, d);
            norm(&mut store, &format!("{p}.ffn.ln"), d);
        }

        for branch in ["vel", "cov"] {
            let p = format!("head.{branch}");
            lin(&mut store, &format!("{p}.lin1"), d, d, &mut rng);
            norm(&mut store, &format!("{p}.ln"), d);
            lin(&mut store, &format!("{p}.lin2"), d, 2, &mut rng);
        }
        store
    }

    /// Spatial embedding: kernel-3 convolution → batch norm → ReLU → linear.
    fn spatial_embed(&self, fx: &mut Fx, x: NodeId) -> Result<NodeId, ModelError> {
        let c = fx.conv(x, "embed.spatial.conv", 1)?;
        let b = fx.batch_norm(c, "embed.spatial.bn")?;
        let r = fx.tape.relu(b);
        fx.linear(r, "embed.spatial.lin")
    }

    /// Temporal embedding: bidirectional LSTM → linear → trainable positional
    /// table.
    fn temporal_embed(&self, fx: &mut Fx, x: NodeId) -> Result<NodeId, ModelError> {
        let p = LstmParamIds {
            w_ih_fwd: fx.p("embed.temporal.lstm.fw.w_ih")?,
            w_hh_fwd: fx.p("embed.temporal.lstm.fw.w_hh")?,
            b_fwd: fx.p("embed.temporal.lstm.fw.b")?,
            w_ih_bwd: fx.p("embed.temporal.lstm.bw.w_ih")?,
            w_hh_bwd: fx.p("embed.temporal.lstm.bw.w_hh")?,
            b_bwd: fx.p("embed.temporal.lstm.bw.b")?,
        };
        let l = fx.tape.bilstm(x, p, self.cfg.lstm_hidden)?;
        let proj = fx.linear(l, "embed.temporal.lin")?;
        let pos = fx.p("embed.temporal.pos")?;
        Ok(fx.tape.add(proj, pos)?)
    }

    /// Multi-head attention with per-head scaled dot-product weights; `q_in`
    /// and `kv_in` may differ (cross-attention).
    fn multi_head_attention(
        &self,
        fx: &mut Fx,
        q_in: NodeId,
        kv_in: NodeId,
        prefix: &str,
        causal: bool,
    ) -> Result<NodeId, ModelError> {
        let heads = self.cfg.heads;
        let q = fx.linear(q_in, &format!("{prefix}.wq"))?;
        let k = fx.linear(kv_in, &format!("{prefix}.wk"))?;
        let v = fx.linear(kv_in, &format!("{prefix}.wv"))?;
        let qh = fx.tape.split_heads(q, heads)?;
        let kh = fx.tape.split_heads(k, heads)?;
        let vh = fx.tape.split_heads(v, heads)?;
        let scores = fx.tape.bmm(qh, kh, true)?;
        let scaled = fx.tape.scale(scores, 1.0 / crate::fm::sqrt(self.cfg.head_dim() as f64));
        let attn = if causal { fx.tape.softmax_causal(scaled)? } else { fx.tape.softmax(scaled)? };
        fx.record(prefix.into(), attn);
        let ctx = fx.tape.bmm(attn, vh, false)?;
        let merged = fx.tape.merge_heads(ctx)?;
        fx.linear(merged, &format!("{prefix}.out"))
    }

    /// Local self-attention: grouped-convolution context `C1`, per-head
    /// time-normalized concatenation scores, attended global context `C2`,
    /// and a two-way softmax gate fusing the two.
    fn local_self_attention(&self, fx: &mut Fx, x: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let m = fx.tape.value(x).shape()[0];
        let heads = self.cfg.heads;
        let c1 = fx.conv(x, &format!("{prefix}.ctx"), self.cfg.local_groups())?;
        let qc = fx.tape.concat(x, c1)?;
        let raw = fx.linear(qc, &format!("{prefix}.score"))?;
        let raw = fx.tape.relu(raw);
        let raw_t = fx.tape.transpose(raw)?;
        let gamma = fx.tape.softmax(raw_t)?; // (heads, m): distribution over time
        fx.record(format!("{prefix}.time"), gamma);
        let v = fx.linear(x, &format!("{prefix}.value"))?;
        let vh = fx.tape.split_heads(v, heads)?;
        let g3 = fx.tape.reshape(gamma, &[heads, 1, m])?;
        let ctx_vec = fx.tape.bmm(g3, vh, false)?; // (heads, 1, dk)
        let ctx_row = fx.tape.merge_heads(ctx_vec)?; // (1, d)
        let c2 = fx.tape.repeat_rows(ctx_row, m)?;
        let gate_in = fx.tape.concat(c1, c2)?;
        let gate_scores = fx.linear(gate_in, &format!("{prefix}.gate"))?;
        let gate = fx.tape.softmax(gate_scores)?; // (m, 2)
        fx.record(format!("{prefix}.gate"), gate);
        let w1 = fx.tape.slice_channels(gate, 0, 1)?;
        let w1 = fx.tape.reshape(w1, &[m])?;
        let w2 = fx.tape.slice_channels(gate, 1, 1)?;
        let w2 = fx.tape.reshape(w2, &[m])?;
        let y1 = fx.tape.scale_rows(c1, w1)?;
        let y2 = fx.tape.scale_rows(c2, w2)?;
        Ok(fx.tape.add(y1, y2)?)
    }

    /// Residual encoder block: 1×1 reduce → local attention → global
    /// attention → 1×1 expand, batch-norm + ReLU between stages, residual add
    /// at the end. The expand projection is zero-initialized, so fresh blocks
    /// are identities.
    fn encoder_block(&self, fx: &mut Fx, x: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let p_enc = self.cfg.dropout_encoder;
        let r = fx.linear(x, &format!("{prefix}.reduce"))?;
        let r = fx.batch_norm(r, &format!("{prefix}.bn1"))?;
        let r = fx.tape.relu(r);
        let l = self.local_self_attention(fx, r, &format!("{prefix}.local"))?;
        let l = fx.dropout(l, p_enc);
        let l = fx.batch_norm(l, &format!("{prefix}.bn2"))?;
        let l = fx.tape.relu(l);
        let g = self.multi_head_attention(fx, l, l, &format!("{prefix}.global"), false)?;
        let g = fx.dropout(g, p_enc);
        let g = fx.batch_norm(g, &format!("{prefix}.bn3"))?;
        let g = fx.tape.relu(g);
        let e = fx.linear(g, &format!("{prefix}.expand"))?;
        Ok(fx.tape.add(x, e)?)
    }

    /// One decoder layer: causal self-attention, cross-attention to the
    /// encoder output, and a position-wise feed-forward, each wrapped as
    /// `y = x + LN(dropout(sublayer(x)))`.
    fn decoder_layer(&self, fx: &mut Fx, y: NodeId, z: NodeId, prefix: &str) -> Result<NodeId, ModelError> {
        let p_dec = self.cfg.dropout_decoder;
        let sa = self.multi_head_attention(fx, y, y, &format!("{prefix}.self"), true)?;
        let sa = fx.dropout(sa, p_dec);
        let sa = fx.layer_norm(sa, &format!("{prefix}.self.ln"))?;
        let y = fx.tape.add(y, sa)?;

        let ca = self.multi_head_attention(fx, y, z, &format!("{prefix}.cross"), false)?;
        let ca = fx.dropout(ca, p_dec);
        let ca = fx.layer_norm(ca, &format!("{prefix}.cross.ln"))?;
        let y = fx.tape.add(y, ca)?;

        let ff = fx.linear(y, &format!("{prefix}.ffn.in"))?;
        let ff = fx.tape.relu(ff);
        let ff = fx.linear(ff, &format!("{prefix}.ffn.out"))?;
        let ff = fx.dropout(ff, p_dec);
        let ff = fx.layer_norm(ff, &format!("{prefix}.ffn.ln"))?;
        Ok(fx.tape.add(y, ff)?)
    }

    /// Velocity and covariance branches: linear → layer norm → linear each;
    /// the covariance branch output is exponentiated after a ±10 log-clamp so
    /// variances are strictly positive.
    fn heads(&self, fx: &mut Fx, h: NodeId) -> Result<(NodeId, NodeId), ModelError> {
        let v = fx.linear(h, "head.vel.lin1")?;
        let v = fx.layer_norm(v, "head.vel.ln")?;
        let vel = fx.linear(v, "head.vel.lin2")?;

        let c = fx.linear(h, "head.cov.lin1")?;
        let c = fx.layer_norm(c, "head.cov.ln")?;
        let u = fx.linear(c, "head.cov.lin2")?;
        let u = fx.tape.clamp(u, -COV_LOG_CLAMP, COV_LOG_CLAMP);
        let cov = fx.tape.exp(u);
        Ok((vel, cov))
    }

    /// Full forward pass over an already-mounted graph.
    ///
    /// `imu` must be `(window_len, input_channels)`. Dropout draws from `rng`
    /// in train mode only; eval mode is deterministic.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bound: &BTreeMap<String, NodeId>,
        imu: NodeId,
        mode: Mode,
        rng: &mut DetRng,
    ) -> Result<ForwardOutput, ModelError> {
        let got = tape.value(imu).shape().to_vec();
        let want = alloc::vec![self.cfg.window_len, self.cfg.input_channels];
        if got != want {
            return Err(ModelError::InputShape { got, want });
        }
        let mut fx = Fx {
            tape,
            bound,
            store,
            mode,
            rng,
            attention: Vec::new(),
            bn_updates: Vec::new(),
        };

        let se = self.spatial_embed(&mut fx, imu)?;
        let mut z = se;
        for i in 0..self.cfg.encoder_layers {
            z = self.encoder_block(&mut fx, z, &format!("encoder.block{i}"))?;
        }
        let mut h = self.temporal_embed(&mut fx, imu)?;
        for i in 0..self.cfg.decoder_layers {
            h = self.decoder_layer(&mut fx, h, z, &format!("decoder.layer{i}"))?;
        }
        let (vel, cov) = self.heads(&mut fx, h)?;
        Ok(ForwardOutput { vel, cov, attention: fx.attention, bn_updates: fx.bn_updates })
    }

    /// Evaluation-mode prediction for one window.
    pub fn predict(&self, store: &ParamStore, window: &Window) -> Result<VelocityEstimate, ModelError> {
        let mut tape = Tape::new();
        let bound = store.mount(&mut tape);
        let imu = tape.constant(window.imu.clone());
        let mut rng = crate::rng::stream(0, 0);
        let out = self.forward_on_tape(&mut tape, store, &bound, imu, Mode::Eval, &mut rng)?;
        Ok(VelocityEstimate {
            vel: tape.value(out.vel).clone(),
            cov_diag: tape.value(out.cov).clone(),
        })
    }
}

/// Convenience wrapper: mount, run, and extract values for one window.
pub fn ctin_forward(
    model: &CtinModel,
    store: &ParamStore,
    window: &Window,
    mode: Mode,
    rng: &mut DetRng,
) -> Result<VelocityEstimate, ModelError> {
    let mut tape = Tape::new();
    let bound = store.mount(&mut tape);
    let imu = tape.constant(window.imu.clone());
    let out = model.forward_on_tape(&mut tape, store, &bound, imu, mode, rng)?;
    Ok(VelocityEstimate { vel: tape.value(out.vel).clone(), cov_diag: tape.value(out.cov).clone() })
}

#[cfg(test)]
mod tests;
