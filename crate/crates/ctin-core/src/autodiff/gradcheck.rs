//! Central-difference gradient oracle.

use alloc::vec::Vec;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Outcome of one [`grad_check`] run.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates compared against the analytic gradient.
    pub checked: usize,
    /// Coordinates skipped because the loss is non-smooth there (the one-sided
    /// difference quotients disagree, e.g. a ReLU straddling zero).
    pub excluded: usize,
}

/// Compare the tape's analytic gradients against central differences
/// `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate, over every input.
///
/// `f` must build a scalar loss from the mounted inputs. The step is
/// `h_scale · max(1, |x|)` per coordinate; relative error uses a
/// `max(|analytic|, |numeric|, 1e-8)` denominator. Coordinates where the
/// forward and backward one-sided quotients disagree by more than 25 % (with
/// a unit floor) are reported as excluded instead of failed.
pub fn grad_check<F>(inputs: &[Tensor], mut f: F, h_scale: f64) -> GradCheckReport
where
    F: FnMut(&mut Tape, &[NodeId]) -> NodeId,
{
    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &ids);
    let f0 = tape.value(loss).scalar_value();
    tape.backward(loss).expect("grad_check loss must be scalar");
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| tape.grad(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &ids);
        tape.value(loss).scalar_value()
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, excluded: 0 };
    for k in 0..inputs.len() {
        for j in 0..inputs[k].numel() {
            let x = inputs[k].data()[j];
            let h = h_scale * crate::fm::abs(x).max(1.0);

            work[k].data_mut()[j] = x + h;
            let fp = eval(&work);
            work[k].data_mut()[j] = x - h;
            let fm_ = eval(&work);
            work[k].data_mut()[j] = x;

            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm_) / h;
            if crate::fm::abs(fwd - bwd) > 0.25 * crate::fm::abs(fwd).max(crate::fm::abs(bwd)).max(1.0) {
                report.excluded += 1;
                continue;
            }
            let numeric = (fp - fm_) / (2.0 * h);
            let a = analytic[k].data()[j];
            let denom = crate::fm::abs(a).max(crate::fm::abs(numeric)).max(1e-8);
            let rel = crate::fm::abs(a - numeric) / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
            report.checked += 1;
        }
    }
    report
}
