//! Principal component analysis. Components are the eigenvectors of the
//! sample covariance of the centered matrix (the right singular vectors of
//! the centered data), kept up to a cumulative explained-variance target.
//! Sign convention: each component's largest-magnitude loading is positive,
//! which keeps serialized loadings reproducible.

use crate::linalg::{symmetric_eigen, Matrix};
use crate::stats::StatsError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k x d, orthonormal rows.
    pub components: Matrix,
    /// Explained variance share of each kept component, nonincreasing.
    pub explained_variance_ratio: Vec<f64>,
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows
    }

    pub fn input_dim(&self) -> usize {
        self.components.cols
    }
}

pub fn pca_fit(x: &Matrix, variance_target: f64) -> Result<PcaModel, StatsError> {
    let n = x.rows;
    let d = x.cols;
    if n < 2 || d == 0 {
        return Err(StatsError::TooFewSamples { need: 2, got: n });
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    let mut cov = centered.gram();
    let denom = (n - 1) as f64;
    for v in &mut cov.data {
        *v /= denom;
    }

    let (eigvals, eigvecs) = symmetric_eigen(&cov);
    let eigvals: Vec<f64> = eigvals.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = eigvals.iter().sum();
    if total <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }

    let ratios: Vec<f64> = eigvals.iter().map(|&v| v / total).collect();
    let mut cumulative = 0.0;
    let mut k = 0;
    for &r in &ratios {
        cumulative += r;
        k += 1;
        if cumulative >= variance_target {
            break;
        }
    }

    let positive = eigvals.iter().filter(|&&v| v > 1e-12 * total).count();
    let k = k.min(positive.max(1));

    let mut components = Matrix::zeros(k, d);
    for row in 0..k {
        let mut comp: Vec<f64> = eigvecs.row(row).to_vec();
        let max_idx = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if comp[max_idx] < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        components.row_mut(row).copy_from_slice(&comp);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios[..k].to_vec(),
        rank_deficient: positive < d,
    })
}

/// Projects rows of `x` onto the model components: (X - mean) C^T.
pub fn pca_project(model: &PcaModel, x: &Matrix) -> Result<Matrix, StatsError> {
    if x.cols != model.input_dim() {
        return Err(StatsError::DimensionMismatch { expected: model.input_dim(), got: x.cols });
    }
    let k = model.n_components();
    let mut out = Matrix::zeros(x.rows, k);
    for i in 0..x.rows {
        let row = x.row(i);
        for c in 0..k {
            let comp = model.components.row(c);
            let mut dot = 0.0;
            for j in 0..x.cols {
                dot += (row[j] - model.mean[j]) * comp[j];
            }
            out.set(i, c, dot);
        }
    }
    Ok(out)
}

/// Maps projected rows back to the original space: Z C + mean.
pub fn pca_reconstruct(model: &PcaModel, z: &Matrix) -> Result<Matrix, StatsError> {
    if z.cols != model.n_components() {
        return Err(StatsError::DimensionMismatch { expected: model.n_components(), got: z.cols });
    }
    let d = model.input_dim();
    let mut out = Matrix::zeros(z.rows, d);
    for i in 0..z.rows {
        for j in 0..d {
            let mut v = model.mean[j];
            for c in 0..model.n_components() {
                v += z.get(i, c) * model.components.get(c, j);
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn line_in_3d_needs_one_component() {
        let mut rng = SeedRng::new(41);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let t = rng.normal();
                vec![2.0 * t, -t, 0.5 * t]
            })
            .collect();
        let model = pca_fit(&Matrix::from_rows(&rows), 0.80).unwrap();
        assert_eq!(model.n_components(), 1);
        assert_abs_diff_eq!(model.explained_variance_ratio[0], 1.0, epsilon = 1e-10);
        assert!(model.rank_deficient);
    }

    #[test]
    fn isotropic_gaussian_splits_evenly() {
        let mut rng = SeedRng::new(42);
        let rows: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let model = pca_fit(&Matrix::from_rows(&rows), 0.80).unwrap();
        assert_eq!(model.n_components(), 2);
        assert_abs_diff_eq!(model.explained_variance_ratio[0], 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(model.explained_variance_ratio[1], 0.5, epsilon = 0.02);
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let mut rng = SeedRng::new(43);
        let rows: Vec<Vec<f64>> =
            (0..100).map(|_| vec![rng.normal() + 3.0, rng.normal() - 1.0, rng.normal()]).collect();
        let model = pca_fit(&Matrix::from_rows(&rows), 0.99999).unwrap();
        let mean_row = Matrix::from_rows(&[model.mean.clone()]);
        let z = pca_project(&model, &mean_row).unwrap();
        for v in &z.data {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn full_rank_round_trip() {
        let mut rng = SeedRng::new(44);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let a = rng.normal();
                let b = rng.normal();
                let c = rng.normal();
                vec![a, 0.5 * a + b, 0.2 * b + 2.0 * c]
            })
            .collect();
        let x = Matrix::from_rows(&rows);
        // variance target 1.0 keeps all components.
        let model = pca_fit(&x, 1.0).unwrap();
        assert_eq!(model.n_components(), 3);
        let z = pca_project(&model, &x).unwrap();
        let back = pca_reconstruct(&model, &z).unwrap();
        for (a, b) in x.data.iter().zip(&back.data) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = SeedRng::new(45);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..5).map(|j| rng.normal() * (1.0 + j as f64)).collect())
            .collect();
        let model = pca_fit(&Matrix::from_rows(&rows), 1.0).unwrap();
        let k = model.n_components();
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = model
                    .components
                    .row(i)
                    .iter()
                    .zip(model.components.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn explained_ratios_are_nonincreasing() {
        let mut rng = SeedRng::new(46);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..6).map(|j| rng.normal() * (j as f64 + 0.5)).collect())
            .collect();
        let model = pca_fit(&Matrix::from_rows(&rows), 1.0).unwrap();
        for w in model.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert!(model.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn dropping_a_coordinate() {
        let model = PcaModel {
            mean: vec![0.0, 0.0],
            components: Matrix::from_rows(&[vec![1.0, 0.0]]),
            explained_variance_ratio: vec![1.0],
            rank_deficient: true,
        };
        let x = Matrix::from_rows(&[vec![3.0, 9.0], vec![-2.0, 4.0]]);
        let z = pca_project(&model, &x).unwrap();
        assert_eq!(z.column(0), vec![3.0, -2.0]);
    }
}
