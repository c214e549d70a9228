//! Mutual information between two series by equal-width histogram binning.
//! Natural log, so results are in nats; 0 * log 0 is taken as 0.

use crate::linalg::Matrix;
use crate::stats::StatsError;

/// Mutual information of a joint probability mass table (rows x cols).
/// The table is normalized internally so raw counts are accepted too.
pub fn mutual_information_from_joint(joint: &Matrix) -> f64 {
    let total: f64 = joint.data.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let rows = joint.rows;
    let cols = joint.cols;
    let mut px = vec![0.0; rows];
    let mut py = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let p = joint.get(i, j) / total;
            px[i] += p;
            py[j] += p;
        }
    }
    let mut info = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let p = joint.get(i, j) / total;
            if p > 0.0 {
                info += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    info
}

fn bin_index(v: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let idx = ((v - min) / (max - min) * bins as f64).floor() as usize;
    idx.min(bins - 1)
}

pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::TooFewSamples { need: 1, got: 0 });
    }
    let (xmin, xmax) = min_max(x);
    let (ymin, ymax) = min_max(y);
    let mut joint = Matrix::zeros(bins, bins);
    for (&a, &b) in x.iter().zip(y) {
        let i = bin_index(a, xmin, xmax, bins);
        let j = bin_index(b, ymin, ymax, bins);
        joint.data[i * bins + j] += 1.0;
    }
    Ok(mutual_information_from_joint(&joint))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}
