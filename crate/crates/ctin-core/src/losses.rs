//! Training losses: MSE, integral velocity loss (IVL), covariance negative
//! log-likelihood (CNL), and the learned multi-task combination.
//!
//! All losses are built as graph nodes so they differentiate through the
//! model. Reductions are means over timesteps so values transfer across
//! window lengths.

use crate::autodiff::{AutodiffError, NodeId, ParamStore, Tape};

/// Parameter-store paths of the learned multi-task log-variances.
pub const LOG_VAR_V: &str = "loss.log_var_v";
pub const LOG_VAR_C: &str = "loss.log_var_c";

/// Mounted handles to the two trainable observation-noise scalars,
/// parameterized as log-variances (`log δ²`) for positivity; initialized to 0,
/// i.e. δ = 1.
#[derive(Clone, Copy, Debug)]
pub struct MultiTaskParams {
    pub log_var_v: NodeId,
    pub log_var_c: NodeId,
}

impl MultiTaskParams {
    /// Register the two scalars (zero-initialized) in a parameter store.
    pub fn register(store: &mut ParamStore) {
        store.insert(LOG_VAR_V, crate::autodiff::Tensor::scalar(0.0));
        store.insert(LOG_VAR_C, crate::autodiff::Tensor::scalar(0.0));
    }

    /// Mount from a store binding produced by [`ParamStore::mount`].
    pub fn mounted(
        bound: &alloc::collections::BTreeMap<alloc::string::String, NodeId>,
    ) -> Result<Self, LossError> {
        let get = |name: &str| {
            bound
                .get(name)
                .copied()
                .ok_or_else(|| LossError::Autodiff(AutodiffError::UnknownParam(name.into())))
        };
        Ok(Self { log_var_v: get(LOG_VAR_V)?, log_var_c: get(LOG_VAR_C)? })
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("covariance entry {index} is not strictly positive: {value}")]
    NonPositiveVariance { index: usize, value: f64 },
}

/// Mean of squared elementwise differences.
pub fn mse_loss(tape: &mut Tape, pred: NodeId, gt: NodeId) -> Result<NodeId, LossError> {
    if tape.value(pred).shape() != tape.value(gt).shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "mse_loss",
            lhs: tape.value(pred).shape().to_vec(),
            rhs: tape.value(gt).shape().to_vec(),
        }
        .into());
    }
    let d = tape.sub(pred, gt)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Integral velocity loss over one window.
///
/// Two terms, both means over timesteps of squared 2-norms:
/// the forward-Euler integral of the predicted velocity compared against the
/// ground-truth positional displacement within the window (the integration
/// origin cancels, making the term translation-invariant), plus the cumulative
/// velocity error `‖Σ_{s≤t}(v̂_s − v_s)·dt‖²`.
pub fn ivl(
    tape: &mut Tape,
    pred_vel: NodeId,
    gt_vel: NodeId,
    gt_pos: NodeId,
    dt: f64,
) -> Result<NodeId, LossError> {
    let shape = tape.value(pred_vel).shape().to_vec();
    if shape != tape.value(gt_vel).shape() || shape != tape.value(gt_pos).shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "ivl",
            lhs: shape,
            rhs: tape.value(gt_vel).shape().to_vec(),
        }
        .into());
    }
    let m = shape[0];
    let d = tape.sub(pred_vel, gt_vel)?;
    let step = tape.scale(d, dt);
    // Inclusive running sum: cumulative velocity error.
    let cum = tape.cumsum_time(step)?;
    let cum_sq = tape.mul(cum, cum)?;
    let sum_e = tape.sum(cum_sq);
    let l_e = tape.scale(sum_e, 1.0 / m as f64);
    // Exclusive running sum is the predicted-minus-true displacement at each
    // row under forward Euler.
    let excl = tape.sub(cum, step)?;
    let first = tape.slice_time(gt_pos, 0, 1)?;
    let first_rows = tape.repeat_rows(first, m)?;
    let gt_disp = tape.sub(gt_pos, first_rows)?;
    let pred_disp_err = {
        // excl already holds Σ_{s<t}(v̂−v)·dt = (p̂_t − p̂_0) − (gt Euler disp);
        // subtracting the *stored* gt displacement keeps the term honest when
        // gt_pos is not an exact integral of gt_vel.
        let gt_vel_step = tape.scale(gt_vel, dt);
        let gt_cum = tape.cumsum_time(gt_vel_step)?;
        let gt_excl = tape.sub(gt_cum, gt_vel_step)?;
        let pred_excl = tape.add(excl, gt_excl)?;
        tape.sub(pred_excl, gt_disp)?
    };
    let sq = tape.mul(pred_disp_err, pred_disp_err)?;
    let sum_p = tape.sum(sq);
    let l_p = tape.scale(sum_p, 1.0 / m as f64);
    Ok(tape.add(l_p, l_e)?)
}

/// Gaussian negative log-likelihood of the velocity under a predicted
/// diagonal covariance: mean over timesteps of
/// `½[Σ_axis e²/σ² + ln(σ_x²·σ_y²)]` (the `ln 2π` constant is dropped).
pub fn cnl(
    tape: &mut Tape,
    pred_vel: NodeId,
    cov_diag: NodeId,
    gt_vel: NodeId,
) -> Result<NodeId, LossError> {
    let shape = tape.value(pred_vel).shape().to_vec();
    if shape != tape.value(cov_diag).shape() || shape != tape.value(gt_vel).shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "cnl",
            lhs: shape,
            rhs: tape.value(cov_diag).shape().to_vec(),
        }
        .into());
    }
    for (index, &value) in tape.value(cov_diag).data().iter().enumerate() {
        if !(value > 0.0) {
            return Err(LossError::NonPositiveVariance { index, value });
        }
    }
    let m = shape[0];
    let e = tape.sub(pred_vel, gt_vel)?;
    let e2 = tape.mul(e, e)?;
    let maha = tape.div(e2, cov_diag)?;
    let logdet = tape.log(cov_diag);
    let per_entry = tape.add(maha, logdet)?;
    let total = tape.sum(per_entry);
    Ok(tape.scale(total, 0.5 / m as f64))
}

/// Learned two-task combination
/// `½·e^{−log δ_v²}·L_v + ½·e^{−log δ_c²}·L_c + ½(log δ_v² + log δ_c²)`,
/// which is `L_v/(2δ_v²) + L_c/(2δ_c²) + log δ_v·δ_c` in noise-scalar form.
pub fn multitask_loss(
    tape: &mut Tape,
    l_v: NodeId,
    l_c: NodeId,
    mt: MultiTaskParams,
) -> Result<NodeId, LossError> {
    let neg_v = tape.scale(mt.log_var_v, -1.0);
    let w_v = tape.exp(neg_v);
    let neg_c = tape.scale(mt.log_var_c, -1.0);
    let w_c = tape.exp(neg_c);
    let tv = tape.mul(w_v, l_v)?;
    let tv = tape.scale(tv, 0.5);
    let tc = tape.mul(w_c, l_c)?;
    let tc = tape.scale(tc, 0.5);
    let reg = tape.add(mt.log_var_v, mt.log_var_c)?;
    let reg = tape.scale(reg, 0.5);
    let s = tape.add(tv, tc)?;
    Ok(tape.add(s, reg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use approx::assert_abs_diff_eq;

    #[test]
    fn mse_closed_forms_and_oracle() {
        let mut rng = crate::rng::root(51);
        let gt = Tensor::uniform(&[7, 2], 1.0, &mut rng);

        let mut t = Tape::new();
        let p = t.constant(gt.clone());
        let g = t.constant(gt.clone());
        let l = mse_loss(&mut t, p, g).unwrap();
        assert_eq!(t.value(l).scalar_value(), 0.0);

        let mut off = gt.clone();
        off.data_mut().iter_mut().for_each(|x| *x += 1.0);
        let p = t.constant(off.clone());
        let l = mse_loss(&mut t, p, g).unwrap();
        assert_abs_diff_eq!(t.value(l).scalar_value(), 1.0, epsilon = 1e-12);

        let pred = Tensor::uniform(&[7, 2], 1.0, &mut rng);
        let p = t.constant(pred.clone());
        let l = mse_loss(&mut t, p, g).unwrap();
        let oracle: f64 = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 14.0;
        assert_abs_diff_eq!(t.value(l).scalar_value(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn ivl_vanishes_at_perfect_prediction() {
        // gt_pos is the exact forward-Euler integral of gt_vel, as windows
        // guarantee by construction.
        let mut rng = crate::rng::root(52);
        let (m, dt) = (20usize, 0.02);
        let vel = Tensor::uniform(&[m, 2], 1.0, &mut rng);
        let mut pos = Tensor::zeros(&[m, 2]);
        let (mut px, mut py) = (3.0, -1.0);
        for t in 0..m {
            pos.data_mut()[t * 2] = px;
            pos.data_mut()[t * 2 + 1] = py;
            px += vel.at2(t, 0) * dt;
            py += vel.at2(t, 1) * dt;
        }
        let mut t = Tape::new();
        let p = t.constant(vel.clone());
        let gv = t.constant(vel.clone());
        let gp = t.constant(pos);
        let l = ivl(&mut t, p, gv, gp, dt).unwrap();
        assert!(t.value(l).scalar_value() < 1e-12);
    }

    #[test]
    fn ivl_constant_error_matches_direct_series() {
        let (m, dt) = (15usize, 0.02);
        let e = [0.3, -0.2];
        let gt_vel = Tensor::zeros(&[m, 2]);
        let gt_pos = Tensor::filled(&[m, 2], 2.0);
        let mut pred = Tensor::zeros(&[m, 2]);
        for t in 0..m {
            pred.data_mut()[t * 2] = e[0];
            pred.data_mut()[t * 2 + 1] = e[1];
        }
        let run = |dt: f64| -> f64 {
            let mut t = Tape::new();
            let p = t.constant(pred.clone());
            let gv = t.constant(gt_vel.clone());
            let gp = t.constant(gt_pos.clone());
            let l = ivl(&mut t, p, gv, gp, dt).unwrap();
            t.value(l).scalar_value()
        };
        // Independent series oracle: inclusive term ‖(t+1)·dt·e‖², exclusive
        // term ‖t·dt·e‖².
        let e2 = e[0] * e[0] + e[1] * e[1];
        let mut oracle = 0.0;
        for t in 0..m {
            let incl = ((t + 1) as f64 * dt) * ((t + 1) as f64 * dt);
            let excl = (t as f64 * dt) * (t as f64 * dt);
            oracle += (incl + excl) * e2;
        }
        oracle /= m as f64;
        assert_abs_diff_eq!(run(dt), oracle, epsilon = 1e-12);
        // dt homogeneity: both terms are quadratic in dt.
        assert_abs_diff_eq!(run(2.0 * dt), 4.0 * run(dt), epsilon = 1e-9);
    }

    #[test]
    fn cnl_closed_forms() {
        let m = 9usize;
        let gt = Tensor::zeros(&[m, 2]);
        let ones = Tensor::filled(&[m, 2], 1.0);

        let mut t = Tape::new();
        let p = t.constant(gt.clone());
        let c = t.constant(ones.clone());
        let g = t.constant(gt.clone());
        let l = cnl(&mut t, p, c, g).unwrap();
        assert_abs_diff_eq!(t.value(l).scalar_value(), 0.0, epsilon = 1e-15);

        // Error (1,1) with unit variances: ½·2 + 0 = 1.
        let p = t.constant(ones.clone());
        let l = cnl(&mut t, p, c, g).unwrap();
        assert_abs_diff_eq!(t.value(l).scalar_value(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cnl_equals_factored_axis_nll() {
        let mut rng = crate::rng::root(53);
        let m = 11usize;
        let pred = Tensor::uniform(&[m, 2], 1.0, &mut rng);
        let gt = Tensor::uniform(&[m, 2], 1.0, &mut rng);
        let mut cov = Tensor::uniform(&[m, 2], 0.4, &mut rng);
        cov.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());

        let mut t = Tape::new();
        let p = t.constant(pred.clone());
        let c = t.constant(cov.clone());
        let g = t.constant(gt.clone());
        let l = cnl(&mut t, p, c, g).unwrap();

        // Scripted oracle: sum of two independent 1D Gaussian NLLs minus the
        // 2π constants, averaged over time.
        let mut oracle = 0.0;
        for ti in 0..m {
            for ax in 0..2 {
                let e = pred.at2(ti, ax) - gt.at2(ti, ax);
                let s2 = cov.at2(ti, ax);
                oracle += 0.5 * (e * e / s2 + crate::fm::ln(s2));
            }
        }
        oracle /= m as f64;
        assert_abs_diff_eq!(t.value(l).scalar_value(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn cnl_stationary_point_in_variance() {
        // Per axis, for fixed error e, the NLL is minimized at σ² = e² where
        // it equals ½(1 + ln e²); a scripted 1D scan confirms both.
        let e: f64 = 0.7;
        let nll = |s2: f64| 0.5 * (e * e / s2 + crate::fm::ln(s2));
        let best = nll(e * e);
        assert_abs_diff_eq!(best, 0.5 * (1.0 + crate::fm::ln(e * e)), epsilon = 1e-15);
        let mut s2 = 0.05;
        while s2 < 10.0 {
            assert!(nll(s2) >= best - 1e-12, "σ²={s2}");
            s2 *= 1.07;
        }
    }

    #[test]
    fn cnl_rejects_nonpositive_variance() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::zeros(&[3, 2]));
        let g = t.constant(Tensor::zeros(&[3, 2]));
        let mut cov = Tensor::filled(&[3, 2], 1.0);
        cov.data_mut()[4] = 0.0;
        let c = t.constant(cov);
        assert!(matches!(
            cnl(&mut t, p, c, g),
            Err(LossError::NonPositiveVariance { index: 4, .. })
        ));
    }

    fn multitask_value(lv: f64, lc: f64, log_var_v: f64, log_var_c: f64) -> f64 {
        let mut t = Tape::new();
        let lvn = t.constant(Tensor::scalar(lv));
        let lcn = t.constant(Tensor::scalar(lc));
        let vn = t.leaf(Tensor::scalar(log_var_v), true);
        let cn = t.leaf(Tensor::scalar(log_var_c), true);
        let mt = MultiTaskParams { log_var_v: vn, log_var_c: cn };
        let l = multitask_loss(&mut t, lvn, lcn, mt).unwrap();
        t.value(l).scalar_value()
    }

    #[test]
    fn multitask_at_unit_noise_is_plain_average() {
        let (lv, lc) = (0.37, 1.21);
        assert_abs_diff_eq!(multitask_value(lv, lc, 0.0, 0.0), (lv + lc) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn multitask_gradients_match_finite_differences() {
        let report = grad_check(
            &[Tensor::scalar(0.4), Tensor::scalar(0.8), Tensor::scalar(0.1), Tensor::scalar(-0.2)],
            |t, ids| {
                let mt = MultiTaskParams { log_var_v: ids[2], log_var_c: ids[3] };
                multitask_loss(t, ids[0], ids[1], mt).unwrap()
            },
            1e-6,
        );
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn multitask_zero_losses_push_variances_down() {
        // With L_v = L_c = 0 the loss is ½(log δ_v² + log δ_c²); its gradient
        // w.r.t. each log-variance is +½, so descent shrinks them.
        let mut t = Tape::new();
        let zero = t.constant(Tensor::scalar(0.0));
        let vn = t.leaf(Tensor::scalar(0.3), true);
        let cn = t.leaf(Tensor::scalar(-0.1), true);
        let mt = MultiTaskParams { log_var_v: vn, log_var_c: cn };
        let l = multitask_loss(&mut t, zero, zero, mt).unwrap();
        t.backward(l).unwrap();
        assert_abs_diff_eq!(t.grad(vn).unwrap().scalar_value(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.grad(cn).unwrap().scalar_value(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn multitask_with_frozen_equal_noise_ranks_like_the_sum() {
        // Monotone in (L_v + L_c) when both log-variances are held equal.
        let pairs = [(0.1, 0.9), (0.5, 0.7), (2.0, 0.05), (0.3, 0.2)];
        let mut scored: Vec<(f64, f64)> = pairs
            .iter()
            .map(|&(lv, lc)| (multitask_value(lv, lc, 0.4, 0.4), lv + lc))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in scored.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-12);
        }
    }
}
