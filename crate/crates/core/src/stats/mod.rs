//! Statistical engine: descriptive moments, ADF and KPSS stationarity tests,
//! histogram mutual information, PCA, the Friedman rank test, and normal
//! confidence intervals.

mod adf;
mod friedman;
mod kpss;
mod mi;
mod ols;
mod pca;
pub mod special;

pub use adf::{adf_test, AdfOutcome};
pub use friedman::{friedman_test, FriedmanResult};
pub use kpss::{kpss_test, KpssOutcome};
pub use mi::{mutual_information, mutual_information_from_joint};
pub use ols::{ols, OlsFit};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("series too short")]
    TooShort,
    #[error("singular design matrix")]
    SingularDesign,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate series: zero long-run variance")]
    DegenerateSeries,
    #[error("zero total variance")]
    ZeroVariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
}

/// Descriptive moments of a series. Skewness is adjusted Fisher-Pearson,
/// kurtosis is excess (adjusted for n >= 4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summary_stats(series: &[f64]) -> Result<SummaryStats, StatsError> {
    let n = series.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: n });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;

    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };

    let m2 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = series.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let m4 = series.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let std = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();

    let (skewness, kurtosis) = if m2 > 0.0 {
        let g1 = m3 / m2.powf(1.5);
        let g2 = m4 / (m2 * m2) - 3.0;
        let skew = if n > 2 {
            (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1
        } else {
            g1
        };
        let kurt = if n > 3 {
            ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0))
        } else {
            g2
        };
        (skew, kurt)
    } else {
        (0.0, 0.0)
    };

    Ok(SummaryStats {
        mean,
        median,
        std,
        skewness,
        kurtosis,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stationary,
    NonStationary,
}

/// Joint ADF + KPSS stationarity report for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub adf_stat: f64,
    pub adf_pvalue: f64,
    pub lags_used: usize,
    pub kpss_stat: f64,
    pub kpss_pvalue: f64,
    pub verdict: Verdict,
}

/// Runs both tests and applies the joint rule: stationary iff ADF rejects a
/// unit root (p < 0.05) and KPSS fails to reject stationarity (p > 0.05).
/// Conflicting test outcomes are treated as non-stationary.
pub fn stationarity_report(series: &[f64]) -> Result<StationarityReport, StatsError> {
    let adf = adf_test(series, None)?;
    let kpss = kpss_test(series)?;
    let verdict = if adf.p_value < 0.05 && kpss.p_value > 0.05 {
        Verdict::Stationary
    } else {
        Verdict::NonStationary
    };
    Ok(StationarityReport {
        adf_stat: adf.stat,
        adf_pvalue: adf.p_value,
        lags_used: adf.lags_used,
        kpss_stat: kpss.stat,
        kpss_pvalue: kpss.p_value,
        verdict,
    })
}

/// 95% normal confidence interval over k fold scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub k: usize,
}

pub fn confidence_interval(samples: &[f64]) -> Result<ConfidenceInterval, StatsError> {
    let k = samples.len();
    if k < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: k });
    }
    let kf = k as f64;
    let mean = samples.iter().sum::<f64>() / kf;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kf - 1.0);
    let half_width = 1.96 * var.sqrt() / kf.sqrt();
    Ok(ConfidenceInterval { mean, half_width, k })
}

/// Pearson correlation. Returns `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}
