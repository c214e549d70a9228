//! Augmented Dickey-Fuller unit root test with a constant term.
//!
//! Lag order starts at the Schwert bound floor(12 * (n/100)^0.25) and is
//! pruned downward by the t-statistic of the longest included lag at the
//! 10% two-sided level. Asymptotic p-values come from the response-surface
//! polynomial for the constant, no-trend case, mapped through the normal
//! CDF; reported values are clamped to [1e-30, 1].

use crate::linalg::Matrix;
use crate::stats::ols::ols;
use crate::stats::special::norm_cdf;
use crate::stats::StatsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfOutcome {
    pub stat: f64,
    pub p_value: f64,
    pub lags_used: usize,
}

// Response-surface coefficients for the single-series, constant-only case.
const TAU_MAX: f64 = 2.74;
const TAU_MIN: f64 = -18.83;
const TAU_STAR: f64 = -1.61;
const TAU_SMALLP: [f64; 3] = [2.1659, 1.4412, 3.8269e-2];
const TAU_LARGEP: [f64; 4] = [1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2];

// 95th percentile of the standard normal: two-sided 10% pruning threshold.
const PRUNE_T: f64 = 1.6448536269514722;

const P_FLOOR: f64 = 1e-30;

fn poly_ascending(coefs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    let mut xp = 1.0;
    for c in coefs {
        acc += c * xp;
        xp *= x;
    }
    acc
}

/// Asymptotic p-value for the ADF t-statistic (constant, no trend).
pub fn mackinnon_pvalue(stat: f64) -> f64 {
    let raw = if stat > TAU_MAX {
        1.0
    } else if stat < TAU_MIN {
        0.0
    } else if stat <= TAU_STAR {
        norm_cdf(poly_ascending(&TAU_SMALLP, stat))
    } else {
        norm_cdf(poly_ascending(&TAU_LARGEP, stat))
    };
    raw.clamp(P_FLOOR, 1.0)
}

/// Builds the regression sample for a given lag count: rows are indexed so
/// that every row has `trim` observations of differenced history available.
/// Columns: intercept, lagged level, then `lags` lagged differences. The
/// level column is centered; with an intercept present this leaves the
/// level coefficient and its t-statistic unchanged while keeping the
/// normal equations well conditioned.
fn design(y: &[f64], dy: &[f64], lags: usize, trim: usize) -> (Matrix, Vec<f64>) {
    let nobs = dy.len() - trim;
    let level_mean = y[trim..dy.len()].iter().sum::<f64>() / nobs as f64;
    let mut rows = Vec::with_capacity(nobs);
    let mut endog = Vec::with_capacity(nobs);
    for t in trim..dy.len() {
        let mut row = Vec::with_capacity(2 + lags);
        row.push(1.0);
        row.push(y[t] - level_mean); // level y_{t-1} relative to dy[t] = y[t+1] - y[t]
        for i in 1..=lags {
            row.push(dy[t - i]);
        }
        rows.push(row);
        endog.push(dy[t]);
    }
    (Matrix::from_rows(&rows), endog)
}

pub fn adf_test(series: &[f64], max_lags: Option<usize>) -> Result<AdfOutcome, StatsError> {
    let n = series.len();
    let max_lag =
        max_lags.unwrap_or_else(|| (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize);
    if n <= max_lag + 10 {
        return Err(StatsError::TooShort);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }

    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();

    // Downward pruning on the sample trimmed at max_lag so candidate fits
    // are comparable.
    let mut best = 0;
    for lags in (1..=max_lag).rev() {
        let (x, endog) = design(series, &dy, lags, max_lag);
        let fit = ols(&x, &endog)?;
        let t_last = fit.t_values[fit.t_values.len() - 1];
        if t_last.abs() >= PRUNE_T {
            best = lags;
            break;
        }
    }

    // Final regression on the longest sample the chosen lag allows.
    let (x, endog) = design(series, &dy, best, best);
    let fit = ols(&x, &endog)?;
    let stat = fit.t_values[1];
    Ok(AdfOutcome { stat, p_value: mackinnon_pvalue(stat), lags_used: best })
}
