use crate::error::{Error, Result};
use crate::numerics::Vector;

/// `ln Σ exp(logits)`, shifted by the maximum.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(logits: &[f64]) -> Vector {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect::<Vec<_>>().into()
}

/// Cross-entropy of `softmax(logits)` against `target`, with
/// `dlogits = softmax(logits) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vector)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut grad: Vector = logits.iter().map(|l| (l - lse).exp()).collect::<Vec<_>>().into();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// `½ (prediction − target)²` summed over outputs.
pub fn squared_error(prediction: &[f64], target: &[f64]) -> (f64, Vector) {
    let diff: Vec<f64> = prediction.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
    (loss, diff.into())
}
