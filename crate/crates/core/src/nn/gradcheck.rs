use alloc::vec::Vec;

use super::Trainable;
use crate::math;
use crate::matrix::Matrix;
use crate::Result;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(tensor index, element index)` of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares analytic gradients against central finite differences of the
/// loss, perturbing every parameter by `+-h`.
pub fn gradient_check<M: Trainable + Clone>(model: &M, x: &Matrix, y: &Matrix, h: f64) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(x, y)?;
    let mut probe = model.clone();
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: (0, 0), checked: 0 };
    for (t, &len) in shapes.iter().enumerate() {
        for e in 0..len {
            let orig = probe.params()[t][e];
            probe.params_mut()[t][e] = orig + h;
            let plus = probe.loss(x, y)?;
            probe.params_mut()[t][e] = orig - h;
            let minus = probe.loss(x, y)?;
            probe.params_mut()[t][e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.0[t][e];
            let abs_err = math::abs(a - numeric);
            let rel = abs_err / math::abs(a).max(math::abs(numeric)).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (t, e);
            }
            report.max_abs_error = report.max_abs_error.max(abs_err);
            report.checked += 1;
        }
    }
    Ok(report)
}
