//! KPSS level-stationarity test.
//!
//! The statistic is sum(S_t^2) / (n^2 * s2_lr) where S_t are cumulative
//! demeaned residuals and s2_lr is the Newey-West long-run variance with
//! Bartlett weights at bandwidth floor(4 * (n/100)^0.25). The p-value is a
//! linear interpolation of the standard critical-value table and therefore
//! only reported within [0.01, 0.10].

use crate::stats::StatsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpssOutcome {
    pub stat: f64,
    pub p_value: f64,
}

const CRIT: [f64; 4] = [0.347, 0.463, 0.574, 0.739];
const PVALS: [f64; 4] = [0.10, 0.05, 0.025, 0.01];

pub fn bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

fn interpolate_pvalue(stat: f64) -> f64 {
    if stat <= CRIT[0] {
        return PVALS[0];
    }
    if stat >= CRIT[3] {
        return PVALS[3];
    }
    for i in 0..3 {
        if stat <= CRIT[i + 1] {
            let f = (stat - CRIT[i]) / (CRIT[i + 1] - CRIT[i]);
            return PVALS[i] + f * (PVALS[i + 1] - PVALS[i]);
        }
    }
    unreachable!()
}

pub fn kpss_test(series: &[f64]) -> Result<KpssOutcome, StatsError> {
    let n = series.len();
    if n < 30 {
        return Err(StatsError::TooShort);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let resid: Vec<f64> = series.iter().map(|v| v - mean).collect();

    let lags = bandwidth(n);
    let mut s2 = resid.iter().map(|e| e * e).sum::<f64>();
    for j in 1..=lags {
        let mut gamma = 0.0;
        for t in j..n {
            gamma += resid[t] * resid[t - j];
        }
        let w = 1.0 - j as f64 / (lags as f64 + 1.0);
        s2 += 2.0 * w * gamma;
    }
    let s2_lr = s2 / nf;
    if s2_lr <= 0.0 || !s2_lr.is_finite() {
        return Err(StatsError::DegenerateSeries);
    }

    let mut acc = 0.0;
    let mut eta = 0.0;
    for e in &resid {
        acc += e;
        eta += acc * acc;
    }
    let stat = eta / (nf * nf * s2_lr);
    Ok(KpssOutcome { stat, p_value: interpolate_pvalue(stat) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noise_is_level_stationary() {
        let mut rng = SeedRng::new(21);
        let y: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
        let out = kpss_test(&y).unwrap();
        assert!(out.stat < 0.463, "stat = {}", out.stat);
        assert_abs_diff_eq!(out.p_value, 0.10);
    }

    #[test]
    fn random_walk_rejects_stationarity() {
        let mut rng = SeedRng::new(22);
        let mut acc = 0.0;
        let y: Vec<f64> = (0..2000)
            .map(|_| {
                acc += rng.normal();
                acc
            })
            .collect();
        let out = kpss_test(&y).unwrap();
        assert!(out.stat > 0.739, "stat = {}", out.stat);
        assert_abs_diff_eq!(out.p_value, 0.01);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(kpss_test(&[5.0; 100]), Err(StatsError::DegenerateSeries)));
    }

    #[test]
    fn location_shift_leaves_statistic_unchanged() {
        let mut rng = SeedRng::new(23);
        let y: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 77.0).collect();
        let a = kpss_test(&y).unwrap();
        let b = kpss_test(&shifted).unwrap();
        assert_abs_diff_eq!(a.stat, b.stat, epsilon = 1e-8);
    }

    #[test]
    fn pvalue_interpolates_between_critical_values() {
        // Midway between the 10% and 5% critical values.
        let mid = 0.5 * (0.347 + 0.463);
        assert_abs_diff_eq!(interpolate_pvalue(mid), 0.075, epsilon = 1e-12);
    }

    #[test]
    fn short_series_errors() {
        assert!(matches!(kpss_test(&[1.0; 10]), Err(StatsError::TooShort)));
    }
}
