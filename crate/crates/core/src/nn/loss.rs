//! Mean squared error loss with an optional L2 weight penalty, and RMSE.
//! RMSE is always penalty-free, so rmse^2 equals the MSE data term.

use crate::nn::tensor::Tensor;
use crate::nn::NnError;

/// MSE data term plus `l2_lambda * sum ||W||^2` over the given weight
/// tensors (biases excluded by the caller). Returns the loss and the
/// gradient with respect to the predictions; the penalty contributes
/// `2 * lambda * W` to each weight gradient, which the training loop adds.
pub fn mse_loss(
    y_true: &[f64],
    y_pred: &[f64],
    l2_lambda: f64,
    weights: &[&Tensor],
) -> Result<(f64, Vec<f64>), NnError> {
    if y_true.len() != y_pred.len() {
        return Err(NnError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(NnError::EmptyData);
    }
    let n = y_true.len() as f64;
    let mut data_term = 0.0;
    let mut grad = vec![0.0; y_true.len()];
    for i in 0..y_true.len() {
        let diff = y_true[i] - y_pred[i];
        data_term += diff * diff;
        grad[i] = -2.0 * diff / n;
    }
    data_term /= n;
    let penalty = l2_penalty(l2_lambda, weights);
    Ok((data_term + penalty, grad))
}

pub fn l2_penalty(l2_lambda: f64, weights: &[&Tensor]) -> f64 {
    if l2_lambda == 0.0 {
        return 0.0;
    }
    l2_lambda * weights.iter().map(|w| w.norm_sq()).sum::<f64>()
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, NnError> {
    if y_true.len() != y_pred.len() {
        return Err(NnError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(NnError::EmptyData);
    }
    let n = y_true.len() as f64;
    let sum: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((sum / n).sqrt())
}
