//! Friedman rank test for comparing k treatments over N blocks.
//!
//! Scores are ranked within each block with ties averaged; the statistic is
//! 12 / (N k (k+1)) * sum_j R_j^2 - 3 N (k+1), chi-squared with k-1 degrees
//! of freedom under the null of equal treatment performance.

use crate::linalg::Matrix;
use crate::stats::special::chi_squared_sf;
use crate::stats::StatsError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi_squared: f64,
    pub df: usize,
    pub p_value: f64,
    pub rank_sums: Vec<f64>,
}

/// Average ranks of one block. Rank 1 is the best score; `lower_is_better`
/// selects the direction.
fn block_ranks(scores: &[f64], lower_is_better: bool) -> Vec<f64> {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let cmp = scores[a].partial_cmp(&scores[b]).unwrap();
        if lower_is_better {
            cmp
        } else {
            cmp.reverse()
        }
    });
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn friedman_test(scores: &Matrix, lower_is_better: bool) -> Result<FriedmanResult, StatsError> {
    let n_blocks = scores.rows;
    let k = scores.cols;
    if n_blocks < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: n_blocks });
    }
    if k < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: k });
    }
    if scores.data.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }

    let mut rank_sums = vec![0.0; k];
    for b in 0..n_blocks {
        let ranks = block_ranks(scores.row(b), lower_is_better);
        for (sum, r) in rank_sums.iter_mut().zip(&ranks) {
            *sum += r;
        }
    }

    let nf = n_blocks as f64;
    let kf = k as f64;
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let chi_squared = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    let chi_squared = chi_squared.max(0.0);
    let df = k - 1;
    let p_value = chi_squared_sf(chi_squared, df);

    Ok(FriedmanResult { chi_squared, df, p_value, rank_sums })
}
