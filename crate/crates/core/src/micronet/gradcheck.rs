//! Central-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::tensor::Tensor;
use super::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor name, flat index, analytic, numeric) for every checked entry.
    pub entries: Vec<(String, usize, f64, f64)>,
    /// Draws rejected because the perturbation crossed a ReLU or pooling kink.
    pub kinks_skipped: usize,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks `count` parameters drawn at random (every tensor is visited at
/// least once when `count` allows) with step `h`. Draws whose ±h
/// perturbation changes the activation pattern are redrawn.
pub fn grad_check(
    model: &Model<f64>,
    frames: &[Tensor<f64>],
    label: usize,
    count: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, NetError> {
    let mut grads = model.zero_grads();
    model.loss_and_grad(frames, label, &mut grads)?;
    let base_pattern = model.forward_trace(frames)?.activation_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = model.params.tensors().len();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries: Vec::with_capacity(count),
        kinks_skipped: 0,
    };
    let max_attempts = count * 50;
    let mut attempts = 0;
    while report.entries.len() < count && attempts < max_attempts {
        attempts += 1;
        let k = report.entries.len();
        let ti = if k < n_tensors {
            k
        } else {
            rng.random_range(0..n_tensors)
        };
        let idx = rng.random_range(0..model.params.tensors()[ti].len());
        let orig = model.params.tensors()[ti].data()[idx];

        probe.params.tensors_mut()[ti].data_mut()[idx] = orig + h;
        let plus = probe.forward_trace(frames)?;
        probe.params.tensors_mut()[ti].data_mut()[idx] = orig - h;
        let minus = probe.forward_trace(frames)?;
        probe.params.tensors_mut()[ti].data_mut()[idx] = orig;
        if plus.activation_pattern() != base_pattern || minus.activation_pattern() != base_pattern
        {
            report.kinks_skipped += 1;
            continue;
        }
        let lp = super::loss::cross_entropy(&plus.logits, label).0;
        let lm = super::loss::cross_entropy(&minus.logits, label).0;
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grads.tensors()[ti].data()[idx];
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
        report
            .entries
            .push((model.params.names()[ti].clone(), idx, analytic, numeric));
    }
    Ok(report)
}
