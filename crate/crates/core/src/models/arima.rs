//! ARIMA baseline estimated by conditional sum of squares.
//!
//! The differenced series is fit with a one-step prediction error
//! recursion; the squared-error objective is minimized with the network
//! core's Adam optimizer over exact analytic gradients (the error
//! recursion is differentiated through its moving-average feedback).
//! Forecasts are rolling one-step-ahead using observed history and are
//! un-differenced before scoring.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::features::difference;
use crate::models::ModelError;
use crate::nn::{Optimizer, OptimizerKind, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaParams {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone)]
pub struct ArimaFit {
    pub params: ArimaParams,
    /// In-sample one-step predictions over the training range (original
    /// units), aligned with `train_actual`.
    pub train_fitted: Vec<f64>,
    pub train_actual: Vec<f64>,
    /// Rolling one-step forecasts over the validation range.
    pub val_forecast: Vec<f64>,
    pub val_actual: Vec<f64>,
}

/// One-step errors and predictions of the ARMA recursion on a differenced
/// series. Errors before index `p` are conditioned to zero.
fn arma_errors(z: &[f64], c: f64, phi: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = phi.len();
    let q = theta.len();
    let n = z.len();
    let mut errors = vec![0.0; n];
    let mut preds = vec![0.0; n];
    for t in 0..n {
        let mut pred = c;
        for (i, ph) in phi.iter().enumerate() {
            if t > i {
                pred += ph * z[t - i - 1];
            }
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j && t >= p {
                let idx = t - j - 1;
                if idx >= p {
                    pred += th * errors[idx];
                }
            }
        }
        preds[t] = pred;
        errors[t] = if t >= p { z[t] - pred } else { 0.0 };
        let _ = q;
    }
    (errors, preds)
}

/// CSS loss and its exact gradient with respect to [c, phi.., theta..].
/// The sensitivity recursion carries de/dw through the moving-average
/// terms.
fn css_loss_grad(z: &[f64], c: f64, phi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let p = phi.len();
    let q = theta.len();
    let nw = 1 + p + q;
    let n = z.len();
    let mut errors = vec![0.0; n];
    let mut sens: Vec<Vec<f64>> = vec![vec![0.0; nw]; n];

    for t in 0..n {
        let mut pred = c;
        let mut direct = vec![0.0; nw];
        direct[0] = 1.0;
        for (i, ph) in phi.iter().enumerate() {
            if t > i {
                pred += ph * z[t - i - 1];
                direct[1 + i] = z[t - i - 1];
            }
        }
        let mut feedback = vec![0.0; nw];
        for (j, th) in theta.iter().enumerate() {
            if t > j && t >= p {
                let idx = t - j - 1;
                if idx >= p {
                    pred += th * errors[idx];
                    direct[1 + p + j] = errors[idx];
                    for w in 0..nw {
                        feedback[w] += th * sens[idx][w];
                    }
                }
            }
        }
        if t >= p {
            errors[t] = z[t] - pred;
            for w in 0..nw {
                sens[t][w] = -(direct[w] + feedback[w]);
            }
        }
    }

    let count = (n - p).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; nw];
    for t in p..n {
        loss += errors[t] * errors[t];
        for w in 0..nw {
            grad[w] += 2.0 * errors[t] * sens[t][w];
        }
    }
    loss /= count;
    for g in &mut grad {
        *g /= count;
    }
    let _ = q;
    (loss, grad)
}

/// Inverts differencing for a one-step prediction at original index `t`:
/// the predicted d-th difference plus the binomial combination of observed
/// lags.
fn undiff_prediction(pred_z: f64, series: &[f64], t: usize, d: usize) -> f64 {
    match d {
        0 => pred_z,
        1 => pred_z + series[t - 1],
        2 => pred_z + 2.0 * series[t - 1] - series[t - 2],
        _ => unreachable!("orders are validated to d <= 2"),
    }
}

/// Fits ARIMA(p, d, q) on the training range and produces rolling one-step
/// forecasts over the validation range. Training must start at row zero
/// (chronological splits).
pub fn arima_fit_forecast(
    series: &[f64],
    orders: (usize, usize, usize),
    train_rows: Range<usize>,
    val_rows: Range<usize>,
) -> Result<ArimaFit, ModelError> {
    let (p, d, q) = orders;
    if d > 2 {
        return Err(ModelError::InvalidOrders("d must be at most 2".into()));
    }
    if p > 8 || q > 8 {
        return Err(ModelError::InvalidOrders("p and q must be at most 8".into()));
    }
    if train_rows.start != 0 {
        return Err(ModelError::InvalidOrders("training must start at row 0".into()));
    }
    if train_rows.end > val_rows.start || val_rows.end > series.len() {
        return Err(ModelError::InvalidOrders("validation must follow training".into()));
    }
    let min_train = d + p + q + 20;
    if train_rows.len() < min_train {
        return Err(ModelError::TooShort { rows: train_rows.len(), lookback: min_train });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonConvergence);
    }

    let z_full = difference(series, d as u8);
    let z_train = &z_full[..train_rows.end - d];

    // Parameters packed as [c, phi.., theta..]; intercept starts at the
    // differenced-series mean, coefficients at zero.
    let nw = 1 + p + q;
    let mean = z_train.iter().sum::<f64>() / z_train.len() as f64;
    let mut params = Tensor::zeros(&[nw]);
    params.data_mut()[0] = mean;

    for &(learning_rate, iters) in &[(0.05, 800usize), (0.01, 800), (0.002, 400)] {
        let mut opt = Optimizer::new(OptimizerKind::Adam, learning_rate, &[nw]);
        let mut best = f64::INFINITY;
        let mut stale = 0usize;
        for _ in 0..iters {
            let (c, phi, theta) = unpack(params.data(), p, q);
            let (loss, grad) = css_loss_grad(z_train, c, &phi, &theta);
            if !loss.is_finite() {
                return Err(ModelError::NonConvergence);
            }
            if loss < best - 1e-13 {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale > 60 {
                    break;
                }
            }
            let grad = Tensor::from_vec(&[nw], grad);
            opt.step(&mut [&mut params], &[&grad]);
            // keep the moving-average part inside the invertibility region
            for j in 0..q {
                let v = params.data()[1 + p + j];
                params.data_mut()[1 + p + j] = v.clamp(-0.98, 0.98);
            }
        }
    }

    let (c, phi, theta) = unpack(params.data(), p, q);
    if params.data().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonConvergence);
    }

    // One pass over the full differenced series with frozen parameters;
    // validation indices use observed history only.
    let (_, preds_z) = arma_errors(&z_full, c, &phi, &theta);

    let warm = d + p; // earliest original index with a defined prediction
    let mut train_fitted = Vec::new();
    let mut train_actual = Vec::new();
    for t in warm.max(train_rows.start)..train_rows.end {
        train_fitted.push(undiff_prediction(preds_z[t - d], series, t, d));
        train_actual.push(series[t]);
    }
    let mut val_forecast = Vec::new();
    let mut val_actual = Vec::new();
    for t in val_rows.clone() {
        val_forecast.push(undiff_prediction(preds_z[t - d], series, t, d));
        val_actual.push(series[t]);
    }

    Ok(ArimaFit {
        params: ArimaParams { p, d, q, phi, theta, intercept: c },
        train_fitted,
        train_actual,
        val_forecast,
        val_actual,
    })
}

fn unpack(data: &[f64], p: usize, q: usize) -> (f64, Vec<f64>, Vec<f64>) {
    (data[0], data[1..1 + p].to_vec(), data[1 + p..1 + p + q].to_vec())
}
