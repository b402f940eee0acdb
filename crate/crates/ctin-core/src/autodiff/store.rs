//! Named, shaped parameter storage with per-parameter Adam moments.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::nn::BnStats;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::AutodiffError;

/// One named array: the value, whether the optimizer touches it, and the Adam
/// moment estimates.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub trainable: bool,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

/// Adam hyperparameters. Weight decay is decoupled: applied directly to the
/// parameter, not folded into the gradient.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-6 }
    }
}

/// Map from parameter path (e.g. `"encoder.block0.global.wq"`) to its entry.
/// Iteration order is lexicographic, so runs are reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a trainable parameter. Panics on duplicate names; shapes are
    /// immutable afterwards.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.insert_entry(name, value, true);
    }

    /// Register a non-trainable buffer (e.g. batch-norm running statistics).
    pub fn insert_buffer(&mut self, name: &str, value: Tensor) {
        self.insert_entry(name, value, false);
    }

    fn insert_entry(&mut self, name: &str, value: Tensor, trainable: bool) {
        let shape = value.shape().to_vec();
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                trainable,
                adam_m: Tensor::zeros(&shape),
                adam_v: Tensor::zeros(&shape),
            },
        );
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    /// Overwrite a parameter value (shape must match the registered one).
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_value",
                lhs: entry.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    /// Lexicographic iteration over `(name, entry)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Mount every trainable parameter onto a tape as a `requires_grad` leaf.
    pub fn mount(&self, tape: &mut Tape) -> BTreeMap<String, NodeId> {
        let mut bound = BTreeMap::new();
        for (name, entry) in &self.entries {
            if entry.trainable {
                bound.insert(name.clone(), tape.leaf(entry.value.clone(), true));
            }
        }
        bound
    }

    /// Collect the gradients accumulated on mounted leaves, keyed by name.
    pub fn collect_grads(&self, tape: &Tape, bound: &BTreeMap<String, NodeId>) -> BTreeMap<String, Tensor> {
        let mut grads = BTreeMap::new();
        for (name, id) in bound {
            if let Some(g) = tape.grad(*id) {
                grads.insert(name.clone(), g.clone());
            }
        }
        grads
    }

    /// Read batch-norm running stats stored as `<prefix>.running_mean` /
    /// `<prefix>.running_var` buffers.
    pub fn bn_stats(&self, prefix: &str) -> Result<BnStats, AutodiffError> {
        let mean = self.value(&alloc::format!("{prefix}.running_mean"))?;
        let var = self.value(&alloc::format!("{prefix}.running_var"))?;
        Ok(BnStats { mean: mean.data().to_vec(), var: var.data().to_vec() })
    }

    /// Fold observed batch statistics into the stored running stats.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BnStats)], momentum: f64) {
        for (prefix, batch) in updates {
            let mut stats = self.bn_stats(prefix).expect("unknown batch-norm buffer");
            stats.update(batch, momentum);
            let mname = alloc::format!("{prefix}.running_mean");
            let vname = alloc::format!("{prefix}.running_var");
            let c = stats.mean.len();
            self.set_value(&mname, Tensor::from_vec(&[c], stats.mean)).unwrap();
            self.set_value(&vname, Tensor::from_vec(&[c], stats.var)).unwrap();
        }
    }

    /// One Adam update with bias correction plus decoupled weight decay:
    /// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`. `step_count` is 1-based.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        cfg: &AdamConfig,
        step_count: u64,
    ) {
        let t = step_count as f64;
        let bc1 = 1.0 - powi(cfg.beta1, t);
        let bc2 = 1.0 - powi(cfg.beta2, t);
        for (name, entry) in self.entries.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            debug_assert_eq!(g.shape(), entry.value.shape());
            let m = entry.adam_m.data_mut();
            let v = entry.adam_v.data_mut();
            let p = entry.value.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= cfg.lr * mhat / (crate::fm::sqrt(vhat) + cfg.eps) + cfg.lr * cfg.weight_decay * p[i];
            }
        }
    }

    /// Snapshot of all values (used to restore best-epoch weights).
    pub fn snapshot_values(&self) -> BTreeMap<String, Tensor> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect()
    }

    /// Restore values from a snapshot; Adam moments are left untouched.
    pub fn restore_values(&mut self, snapshot: &BTreeMap<String, Tensor>) {
        for (name, value) in snapshot {
            if let Some(entry) = self.entries.get_mut(name) {
                entry.value = value.clone();
            }
        }
    }

    /// Global L2 norm of a gradient set.
    pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
        crate::fm::sqrt(grads.values().map(|g| g.sq_norm()).sum())
    }

    /// Scale all gradients so their global norm is at most `max_norm`.
    pub fn clip_grads(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
        let norm = Self::grad_norm(grads);
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in grads.values_mut() {
                g.scale_assign(s);
            }
        }
    }
}

fn powi(base: f64, exp: f64) -> f64 {
    // Integer powers only; exact enough for Adam bias correction.
    let mut acc = 1.0;
    let mut n = exp as u64;
    let mut b = base;
    while n > 0 {
        if n & 1 == 1 {
            acc *= b;
        }
        b *= b;
        n >>= 1;
    }
    acc
}

