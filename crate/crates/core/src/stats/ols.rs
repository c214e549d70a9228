//! Ordinary least squares on a dense design matrix, via column-equilibrated
//! normal equations and Cholesky. Small regressor counts only; this backs
//! the stationarity tests.

use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, Matrix};
use crate::stats::StatsError;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefs: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sigma2: f64,
    pub nobs: usize,
}

pub fn ols(x: &Matrix, y: &[f64]) -> Result<OlsFit, StatsError> {
    let n = x.rows;
    let k = x.cols;
    if y.len() != n {
        return Err(StatsError::LengthMismatch(n, y.len()));
    }
    if n <= k {
        return Err(StatsError::TooFewSamples { need: k + 1, got: n });
    }

    // Scale columns to unit norm to keep the normal equations well
    // conditioned, then undo the scaling on the way out.
    let mut scales = vec![1.0; k];
    let mut xs = x.clone();
    for j in 0..k {
        let norm = (0..n).map(|i| xs.get(i, j).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(StatsError::SingularDesign);
        }
        scales[j] = norm;
        for i in 0..n {
            let v = xs.get(i, j) / norm;
            xs.set(i, j, v);
        }
    }

    let xtx = xs.gram();
    let l = cholesky(&xtx).ok_or(StatsError::SingularDesign)?;
    let mut xty = vec![0.0; k];
    for i in 0..n {
        let row = xs.row(i);
        for j in 0..k {
            xty[j] += row[j] * y[i];
        }
    }
    let beta_scaled = cholesky_solve(&l, &xty);
    let inv = cholesky_inverse(&l);

    let coefs: Vec<f64> = beta_scaled.iter().zip(&scales).map(|(b, s)| b / s).collect();

    let mut residuals = vec![0.0; n];
    let mut rss = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for j in 0..k {
            pred += x.get(i, j) * coefs[j];
        }
        let r = y[i] - pred;
        residuals[i] = r;
        rss += r * r;
    }
    let dof = (n - k) as f64;
    let sigma2 = rss / dof;

    let mut stderr = vec![0.0; k];
    let mut t_values = vec![0.0; k];
    for j in 0..k {
        let var = sigma2 * inv.get(j, j) / (scales[j] * scales[j]);
        stderr[j] = var.max(0.0).sqrt();
        t_values[j] = if stderr[j] > 0.0 { coefs[j] / stderr[j] } else { f64::INFINITY };
    }

    Ok(OlsFit { coefs, stderr, t_values, residuals, sigma2, nobs: n })
}
