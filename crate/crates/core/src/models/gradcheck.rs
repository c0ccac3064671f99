//! Central finite-difference checks of [`loss_gradients`].

use serde::Serialize;

use super::{batch_loss, loss_gradients, Mode, ModelHandle, Result};
use crate::encoding::SequenceWindow;

/// `|a - b| / max(|a|, |b|, 1e-3)`: relative error, absolute near zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_error: f64,
    /// Location of the largest error, e.g. `head.out.weight[3]` or `input[1][42]`.
    pub worst: String,
    pub failures: usize,
}

impl GradCheck {
    fn record(&mut self, location: impl FnOnce() -> String, analytic: f64, numeric: f64, tol: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > tol {
            self.failures += 1;
        }
        if err > self.max_error || self.checked == 1 {
            self.max_error = err;
            self.worst = location();
        }
    }
}

/// Compares every `stride`-th parameter and input entry (offset by `phase`)
/// against central differences with step `h`. `stride = 1` is exhaustive.
pub fn check_gradients(
    model: &ModelHandle,
    batch: &[&SequenceWindow],
    mode: Mode,
    h: f64,
    tol: f64,
    stride: usize,
) -> Result<GradCheck> {
    let stride = stride.max(1);
    let analytic = loss_gradients(model, batch, mode)?;
    let mut report = GradCheck::default();
    let mut probe = model.clone();
    let mut flat = 0usize;
    for k in 0..probe.params.len() {
        for i in 0..probe.params.tensors_mut()[k].len() {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride) {
                continue;
            }
            let original = probe.params.tensors_mut()[k].data()[i];
            probe.params.tensors_mut()[k].data_mut()[i] = original + h;
            let plus = batch_loss(&probe, batch, mode)?;
            probe.params.tensors_mut()[k].data_mut()[i] = original - h;
            let minus = batch_loss(&probe, batch, mode)?;
            probe.params.tensors_mut()[k].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let name = probe.params.name(crate::params::ParamId(k)).to_string();
            report.record(|| format!("{name}[{i}]"), analytic.params[k].data()[i], numeric, tol);
        }
    }
    let mut windows: Vec<SequenceWindow> = batch.iter().map(|w| (*w).clone()).collect();
    for j in 0..windows.len() {
        for i in 0..windows[j].x.len() {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride) {
                continue;
            }
            let original = windows[j].x.data()[i];
            windows[j].x.data_mut()[i] = original + h;
            let plus = batch_loss(model, &windows.iter().collect::<Vec<_>>(), mode)?;
            windows[j].x.data_mut()[i] = original - h;
            let minus = batch_loss(model, &windows.iter().collect::<Vec<_>>(), mode)?;
            windows[j].x.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(|| format!("input[{j}][{i}]"), analytic.inputs[j].data()[i], numeric, tol);
        }
    }
    Ok(report)
}
