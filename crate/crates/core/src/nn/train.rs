//! Seeded mini-batch training loop with early stopping and best-weight
//! restoration. Everything is a pure function of (seed, config, data).

use serde::{Deserialize, Serialize};

use crate::nn::loss::{l2_penalty, mse_loss, rmse};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::tensor::Tensor;
use crate::nn::{Model, NnError};
use crate::rng::SeedRng;

/// Gradient clipping threshold (global norm) applied to recurrent models.
const RECURRENT_CLIP_NORM: f64 = 5.0;

/// Row chunk used for evaluation-mode forward passes, to bound transient
/// activation memory on large window sets.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Window lookback length; the forecast horizon is one step.
    pub lookback: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            dropout_rate: 0.0,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            l2_lambda: 0.0,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            lookback: 24,
        }
    }
}

/// Windowed supervised pairs: `x` is (count, lookback, features), `y` the
/// next-step targets.
#[derive(Debug, Clone)]
pub struct WindowedData {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl WindowedData {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<WindowedData, NnError> {
        if x.rank() != 3 {
            return Err(NnError::ShapeMismatch {
                expected: "(count, lookback, features)".into(),
                got: format!("{:?}", x.shape()),
            });
        }
        if x.dim(0) != y.len() {
            return Err(NnError::LengthMismatch(x.dim(0), y.len()));
        }
        Ok(WindowedData { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<f64>) {
        let row = self.x.dim(1) * self.x.dim(2);
        let mut data = Vec::with_capacity(idx.len() * row);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * row..(i + 1) * row]);
            y.push(self.y[i]);
        }
        (Tensor::from_vec(&[idx.len(), self.x.dim(1), self.x.dim(2)], data), y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub metrics: Vec<EpochMetrics>,
    /// Last epoch that actually ran (1-based).
    pub stopped_epoch: usize,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
}

/// Evaluation-mode predictions, chunked to bound memory.
pub fn predict(model: &Model, x: &Tensor) -> Result<Vec<f64>, NnError> {
    let count = x.dim(0);
    let row = x.len() / count.max(1);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let end = (start + EVAL_CHUNK).min(count);
        let chunk = Tensor::from_vec(
            &[end - start, x.dim(1), x.dim(2)],
            x.data()[start * row..end * row].to_vec(),
        );
        let pred = model.infer(&chunk)?;
        out.extend_from_slice(pred.data());
        start = end;
    }
    Ok(out)
}

fn evaluate(model: &Model, data: &WindowedData, l2_lambda: f64) -> Result<(f64, f64), NnError> {
    let preds = predict(model, &data.x)?;
    let r = rmse(&data.y, &preds)?;
    let loss = r * r + l2_penalty(l2_lambda, &model.weight_tensors());
    Ok((loss, r))
}

/// Mini-batch gradient descent over seeded shuffles with early stopping on
/// validation loss. The last short batch is kept. Weights from the best
/// validation epoch are restored before returning.
pub fn fit(
    model: &mut Model,
    train: &WindowedData,
    val: &WindowedData,
    cfg: &TrainConfig,
) -> Result<FitOutcome, NnError> {
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyData);
    }
    let mut rng = SeedRng::new(cfg.seed);
    let mut optimizer = Optimizer::for_model(cfg.optimizer, cfg.learning_rate, model);
    let clip = model.is_recurrent().then_some(RECURRENT_CLIP_NORM);

    let mut metrics = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights = model.snapshot();
    let mut epochs_since_best = 0usize;
    let mut stopped_epoch = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        stopped_epoch = epoch;
        rng.shuffle(&mut order);
        for batch_idx in order.chunks(cfg.batch_size.max(1)) {
            let (x, y) = train.gather(batch_idx);
            let pred = model.forward_train(&x, &mut rng)?;
            let (batch_loss, grad) = mse_loss(&y, pred.data(), cfg.l2_lambda, &model.weight_tensors())?;
            if !batch_loss.is_finite() {
                return Err(NnError::DivergenceDetected { epoch });
            }
            let grad = Tensor::from_vec(pred.shape(), grad);
            model.zero_grads();
            model.backward(&grad)?;
            if cfg.l2_lambda > 0.0 {
                model.add_l2_to_grads(cfg.l2_lambda);
            }
            if let Some(limit) = clip {
                clip_global_norm(model, limit);
            }
            let grads = model.gradient_set();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            optimizer.step(&mut model.params_mut(), &grad_refs);
        }

        let (train_loss, train_rmse) = evaluate(model, train, cfg.l2_lambda)?;
        let (val_loss, val_rmse) = evaluate(model, val, cfg.l2_lambda)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::DivergenceDetected { epoch });
        }
        metrics.push(EpochMetrics { epoch, train_loss, val_loss, train_rmse, val_rmse });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_weights = model.snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    model.restore(&best_weights);
    Ok(FitOutcome { metrics, stopped_epoch, best_epoch })
}

fn clip_global_norm(model: &mut Model, limit: f64) {
    let norm_sq: f64 = model.grads().iter().map(|g| g.norm_sq()).sum();
    let norm = norm_sq.sqrt();
    if norm > limit {
        let scale = limit / norm;
        for g in model.grads_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

impl Model {
    fn add_l2_to_grads(&mut self, lambda: f64) {
        for layer in &mut self.layers {
            layer.add_l2_to_grads(lambda);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Activation, Dense};
    use approx::assert_abs_diff_eq;

    fn line_data(slope: f64, n: usize, seed: u64) -> WindowedData {
        let mut rng = SeedRng::new(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let y: Vec<f64> = xs.iter().map(|x| slope * x).collect();
        WindowedData::new(Tensor::from_vec(&[n, 1, 1], xs), y).unwrap()
    }

    fn linear_model(w0: f64) -> Model {
        Model::new(vec![
            Box::new(crate::nn::layer::SelectLast::new()),
            Box::new(Dense::with_params(
                Tensor::from_vec(&[1, 1], vec![w0]),
                Tensor::zeros(&[1]),
                Activation::Identity,
            )),
        ])
    }

    #[test]
    fn learns_a_linear_relation() {
        let train = line_data(2.0, 512, 1);
        let val = line_data(2.0, 128, 2);
        let mut model = linear_model(0.0);
        let cfg = TrainConfig { max_epochs: 60, patience: 60, learning_rate: 0.05, ..Default::default() };
        let out = fit(&mut model, &train, &val, &cfg).unwrap();
        assert!(out.metrics.last().unwrap().val_rmse < 0.01);
    }

    #[test]
    fn increasing_validation_loss_stops_after_patience() {
        // Training teaches w -> +1 while validation wants w = -1, so
        // validation loss rises monotonically from the very first epoch.
        let train = line_data(1.0, 256, 3);
        let val = line_data(-1.0, 64, 4);
        let mut model = linear_model(0.0);
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 3,
            learning_rate: 0.02,
            ..Default::default()
        };
        let out = fit(&mut model, &train, &val, &cfg).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.stopped_epoch, 4);
        assert_eq!(out.metrics.len(), 4);
        // Restored weights reproduce the epoch-1 validation loss.
        let (val_loss, _) = evaluate(&model, &val, 0.0).unwrap();
        assert_abs_diff_eq!(val_loss, out.metrics[0].val_loss, epsilon = 1e-12);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let train = line_data(2.0, 200, 5);
        let val = line_data(2.0, 50, 6);
        let cfg = TrainConfig { max_epochs: 10, dropout_rate: 0.0, ..Default::default() };

        let mut rng_a = SeedRng::new(77);
        let mut a = Model::new(vec![
            Box::new(crate::nn::layer::SelectLast::new()),
            Box::new(Dense::new(1, 8, Activation::Tanh, &mut rng_a)),
            Box::new(Dense::new(8, 1, Activation::Identity, &mut rng_a)),
        ]);
        let mut rng_b = SeedRng::new(77);
        let mut b = Model::new(vec![
            Box::new(crate::nn::layer::SelectLast::new()),
            Box::new(Dense::new(1, 8, Activation::Tanh, &mut rng_b)),
            Box::new(Dense::new(8, 1, Activation::Identity, &mut rng_b)),
        ]);

        let out_a = fit(&mut a, &train, &val, &cfg).unwrap();
        let out_b = fit(&mut b, &train, &val, &cfg).unwrap();
        assert_eq!(out_a.metrics, out_b.metrics);
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn train_loss_nonincreasing_for_small_rate_on_convex_model() {
        let train = line_data(1.5, 256, 7);
        let val = line_data(1.5, 64, 8);
        let mut model = linear_model(0.0);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 20,
            patience: 20,
            ..Default::default()
        };
        let out = fit(&mut model, &train, &val, &cfg).unwrap();
        for pair in out.metrics.windows(2) {
            assert!(pair[1].train_loss <= pair[0].train_loss + 1e-12);
        }
    }

    #[test]
    fn weight_decay_shrinks_weights_without_data_error() {
        // Inputs and targets are all zero, so the only force is the L2 pull.
        let n = 32;
        let data =
            WindowedData::new(Tensor::zeros(&[n, 1, 1]), vec![0.0; n]).unwrap();
        let mut model = linear_model(0.5);
        let cfg = TrainConfig {
            l2_lambda: 0.01,
            learning_rate: 0.01,
            max_epochs: 10,
            patience: 10,
            batch_size: n,
            ..Default::default()
        };
        let mut norms = vec![model.params()[0].norm_sq()];
        for _ in 0..5 {
            fit(&mut model, &data, &data, &TrainConfig { max_epochs: 1, ..cfg.clone() }).unwrap();
            norms.push(model.params()[0].norm_sq());
        }
        for pair in norms.windows(2) {
            assert!(pair[1] < pair[0], "norms must strictly decrease: {norms:?}");
        }
    }

    #[test]
    fn nan_targets_are_reported_as_divergence() {
        let mut data = line_data(1.0, 64, 9);
        data.y[3] = f64::NAN;
        let mut model = linear_model(0.0);
        let out = fit(&mut model, &data, &data, &TrainConfig::default());
        assert!(matches!(out, Err(NnError::DivergenceDetected { .. })));
    }

    #[test]
    fn predict_is_repeatable_and_ignores_dropout_rate() {
        let mut rng = SeedRng::new(11);
        let model = Model::new(vec![
            Box::new(crate::nn::layer::SelectLast::new()),
            Box::new(Dense::new(2, 4, Activation::Tanh, &mut rng)),
            Box::new(crate::nn::layer::Dropout::new(0.5)),
            Box::new(Dense::new(4, 1, Activation::Identity, &mut rng)),
        ]);
        let x = Tensor::from_vec(&[3, 1, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let a = predict(&model, &x).unwrap();
        let b = predict(&model, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_parameter_head_predicts_its_bias() {
        let model = Model::new(vec![
            Box::new(crate::nn::layer::SelectLast::new()),
            Box::new(Dense::with_params(
                Tensor::zeros(&[1, 3]),
                Tensor::from_vec(&[1], vec![0.7]),
                Activation::Identity,
            )),
        ]);
        let x = Tensor::from_vec(&[2, 1, 3], vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
        let preds = predict(&model, &x).unwrap();
        assert_eq!(preds, vec![0.7, 0.7]);
    }
}
