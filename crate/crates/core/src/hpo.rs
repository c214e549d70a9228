//! Two-stage hyperparameter optimization: seeded random search over the
//! standard space, then exhaustive grid refinement of the numeric axes
//! around the incumbent. Selection is ascending mean validation RMSE over
//! all four ratio splits, with ties broken by generalization gap and then
//! parameter count.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{prepare_split, run_prepared, split_point, EvalError, PreparedSplit, TrainBudget};
use crate::features::PipelineOptions;
use crate::ingest::TimeSeriesTable;
use crate::models::{build_model, ModelFamily, ModelSpec, WindowSpec};
use crate::nn::{Activation, OptimizerKind};
use crate::rng::SeedRng;

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("search budget must be at least 1")]
    EmptyBudget,
    #[error("every trial diverged")]
    AllTrialsDiverged,
    #[error("refinement requires a successful incumbent")]
    DivergedIncumbent,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ratio splits every trial is evaluated at.
pub const TRIAL_RATIOS: [f64; 4] = [0.2, 0.3, 0.4, 0.5];

/// Reduced training budget used during search; final retraining uses the
/// full configuration.
pub const SEARCH_BUDGET: TrainBudget = TrainBudget { max_epochs: 30, patience: 5 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: (usize, usize),
    pub neurons: (usize, usize),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub dropout: (f64, f64),
    pub batch_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            layers: (2, 5),
            neurons: (32, 256),
            learning_rate: (1e-4, 1e-2),
            dropout: (0.1, 0.5),
            batch_sizes: vec![32, 64, 128],
            activations: vec![Activation::Relu, Activation::Tanh, Activation::Sigmoid],
        }
    }
}

impl SearchSpace {
    pub fn contains(&self, config: &TrialConfig) -> bool {
        (self.layers.0..=self.layers.1).contains(&config.layers)
            && (self.neurons.0..=self.neurons.1).contains(&config.neurons)
            && config.learning_rate >= self.learning_rate.0
            && config.learning_rate <= self.learning_rate.1
            && config.dropout >= self.dropout.0
            && config.dropout <= self.dropout.1
            && self.batch_sizes.contains(&config.batch_size)
            && self.activations.contains(&config.activation)
    }

    fn sample(&self, rng: &mut SeedRng) -> TrialConfig {
        let layers = rng.uniform_int(self.layers.0 as i64, self.layers.1 as i64) as usize;
        let neurons = rng.uniform_int(self.neurons.0 as i64, self.neurons.1 as i64) as usize;
        let lr = (rng.uniform_range(self.learning_rate.0.ln(), self.learning_rate.1.ln())).exp();
        let dropout = rng.uniform_range(self.dropout.0, self.dropout.1);
        let batch_size = *rng.pick(&self.batch_sizes);
        let activation = *rng.pick(&self.activations);
        TrialConfig { layers, neurons, learning_rate: lr, dropout, batch_size, activation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub layers: usize,
    pub neurons: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub activation: Activation,
}

impl TrialConfig {
    /// Materializes the sampled shape for a family: `layers` hidden layers
    /// of `neurons` units each, structured by the family template.
    pub fn to_model_spec(&self, family: ModelFamily) -> ModelSpec {
        let mut spec = ModelSpec::preset(family);
        spec.layer_widths = vec![self.neurons; self.layers];
        spec.activations = vec![self.activation];
        spec.learning_rate = self.learning_rate;
        spec.dropout_rate = self.dropout;
        spec.batch_size = self.batch_size;
        spec.optimizer = OptimizerKind::Adam;
        // search applies dropout but leaves the L2 axis alone
        spec.l2_lambda = 0.0;
        spec.regularized = true;
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub fold_rmses: Vec<f64>,
    pub mean_val_rmse: f64,
    pub mean_train_rmse: f64,
    pub parameter_count: usize,
    pub status: TrialStatus,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn generalization_gap(&self) -> f64 {
        (self.mean_val_rmse - self.mean_train_rmse).abs()
    }
}

fn rank_key(t: &TrialResult) -> (u8, f64, f64, usize) {
    let diverged = if t.status == TrialStatus::Ok { 0 } else { 1 };
    (diverged, t.mean_val_rmse, t.generalization_gap(), t.parameter_count)
}

fn better(a: &TrialResult, b: &TrialResult) -> std::cmp::Ordering {
    let ka = rank_key(a);
    let kb = rank_key(b);
    ka.0.cmp(&kb.0)
        .then(ka.1.partial_cmp(&kb.1).unwrap_or(std::cmp::Ordering::Equal))
        .then(ka.2.partial_cmp(&kb.2).unwrap_or(std::cmp::Ordering::Equal))
        .then(ka.3.cmp(&kb.3))
}

/// Prepares the four trial splits once; every trial reuses them.
pub fn trial_splits(
    table: &TimeSeriesTable,
    opts: &PipelineOptions,
) -> Result<Vec<PreparedSplit>, HpoError> {
    let n = table.n_rows();
    TRIAL_RATIOS
        .iter()
        .map(|&ratio| {
            let train_end = split_point(n, ratio);
            Ok(prepare_split(table, opts, train_end, train_end..n)?)
        })
        .collect()
}

/// Evaluates one configuration at every trial ratio, averaging validation
/// RMSE across the splits.
fn evaluate_trial(
    trial_id: usize,
    config: TrialConfig,
    family: ModelFamily,
    splits: &[PreparedSplit],
    seed: u64,
) -> TrialResult {
    let spec = config.to_model_spec(family);
    let lookback = splits.first().map(|s| s.lookback).unwrap_or(1);
    let parameter_count = build_model(&spec, &WindowSpec::new(lookback, 1), 0)
        .map(|m| m.param_count())
        .unwrap_or(0);

    let mut fold_rmses = Vec::with_capacity(splits.len());
    let mut train_rmses = Vec::with_capacity(splits.len());
    let root = SeedRng::new(seed);
    for (i, split) in splits.iter().enumerate() {
        match run_prepared(&spec, split, root.derive(i as u64).seed(), Some(SEARCH_BUDGET)) {
            Ok(run) => {
                fold_rmses.push(run.metrics.val.rmse);
                train_rmses.push(run.metrics.train.rmse);
            }
            Err(e) => {
                return TrialResult {
                    trial_id,
                    config,
                    fold_rmses,
                    mean_val_rmse: f64::INFINITY,
                    mean_train_rmse: f64::INFINITY,
                    parameter_count,
                    status: TrialStatus::Diverged,
                    error: Some(e.to_string()),
                };
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    TrialResult {
        trial_id,
        config,
        mean_val_rmse: mean(&fold_rmses),
        mean_train_rmse: mean(&train_rmses),
        fold_rmses,
        parameter_count,
        status: TrialStatus::Ok,
        error: None,
    }
}

/// Stage one: `budget` independent samples from the space, each scored by
/// the multi-split protocol, ranked ascending by mean validation RMSE with
/// diverged trials last.
pub fn random_search(
    space: &SearchSpace,
    family: ModelFamily,
    splits: &[PreparedSplit],
    budget: usize,
    seed: u64,
) -> Result<Vec<TrialResult>, HpoError> {
    if budget == 0 {
        return Err(HpoError::EmptyBudget);
    }
    let root = SeedRng::new(seed);
    let mut results = Vec::with_capacity(budget);
    for trial_id in 0..budget {
        // each trial owns an rng stream derived from (seed, trial index)
        let mut sample_rng = root.derive(trial_id as u64);
        let config = space.sample(&mut sample_rng);
        results.push(evaluate_trial(
            trial_id,
            config,
            family,
            splits,
            root.derive(1_000_000 + trial_id as u64).seed(),
        ));
    }
    results.sort_by(better);
    if results.first().map(|t| t.status) != Some(TrialStatus::Ok) {
        return Err(HpoError::AllTrialsDiverged);
    }
    Ok(results)
}

/// Neighbor offsets per numeric axis: learning rate halves/doubles,
/// neurons step by 32, dropout by 0.1, all clamped into the space.
/// Categorical axes stay fixed.
fn axis_values(space: &SearchSpace, center: &TrialConfig) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let lrs = vec![
        (center.learning_rate / 2.0).max(space.learning_rate.0),
        center.learning_rate,
        (center.learning_rate * 2.0).min(space.learning_rate.1),
    ];
    let neurons = vec![
        center.neurons.saturating_sub(32).max(space.neurons.0),
        center.neurons,
        (center.neurons + 32).min(space.neurons.1),
    ];
    let dropouts = vec![
        (center.dropout - 0.1).max(space.dropout.0),
        center.dropout,
        (center.dropout + 0.1).min(space.dropout.1),
    ];
    (lrs, neurons, dropouts)
}

pub struct RefineOutcome {
    pub best: TrialResult,
    /// Every evaluated neighborhood point, in grid order (27 entries).
    pub evaluations: Vec<TrialResult>,
}

/// Stage two: exhaustive evaluation of the 3x3x3 neighborhood around the
/// incumbent (center included). Returns the incumbent unchanged if no
/// neighbor improves mean validation RMSE.
pub fn grid_refine(
    incumbent: &TrialResult,
    space: &SearchSpace,
    family: ModelFamily,
    splits: &[PreparedSplit],
    seed: u64,
) -> Result<RefineOutcome, HpoError> {
    if incumbent.status != TrialStatus::Ok {
        return Err(HpoError::DivergedIncumbent);
    }
    let (lrs, neurons, dropouts) = axis_values(space, &incumbent.config);
    let root = SeedRng::new(seed);
    let mut evaluations = Vec::with_capacity(27);
    let mut trial_id = 0usize;
    for &lr in &lrs {
        for &n in &neurons {
            for &drop in &dropouts {
                let config = TrialConfig {
                    learning_rate: lr,
                    neurons: n,
                    dropout: drop,
                    ..incumbent.config.clone()
                };
                evaluations.push(evaluate_trial(
                    trial_id,
                    config,
                    family,
                    splits,
                    root.derive(trial_id as u64).seed(),
                ));
                trial_id += 1;
            }
        }
    }
    let best_eval = evaluations.iter().min_by(|a, b| better(a, b)).cloned().unwrap();
    let best = if best_eval.status == TrialStatus::Ok
        && best_eval.mean_val_rmse < incumbent.mean_val_rmse
    {
        best_eval
    } else {
        incumbent.clone()
    };
    Ok(RefineOutcome { best, evaluations })
}

/// Append-style audit log of every trial: one CSV row per configuration.
pub fn write_trial_log(results: &[TrialResult], path: &Path) -> Result<(), HpoError> {
    let mut out = String::from(
        "trial_id,layers,neurons,learning_rate,dropout,batch_size,activation,fold_rmses,mean_val_rmse,mean_train_rmse,parameter_count,status\n",
    );
    for t in results {
        let folds = t
            .fold_rmses
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{:.6e},{:.3},{},{:?},{},{},{},{},{}\n",
            t.trial_id,
            t.config.layers,
            t.config.neurons,
            t.config.learning_rate,
            t.config.dropout,
            t.config.batch_size,
            t.config.activation,
            folds,
            if t.mean_val_rmse.is_finite() { format!("{:.6}", t.mean_val_rmse) } else { String::new() },
            if t.mean_train_rmse.is_finite() { format!("{:.6}", t.mean_train_rmse) } else { String::new() },
            t.parameter_count,
            match t.status {
                TrialStatus::Ok => "ok",
                TrialStatus::Diverged => "diverged",
            },
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_configs_respect_every_bound() {
        let space = SearchSpace::default();
        let mut rng = SeedRng::new(1);
        for _ in 0..1000 {
            let c = space.sample(&mut rng);
            assert!(space.contains(&c), "out of bounds: {c:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = SearchSpace::default();
        let mut a = SeedRng::new(42);
        let mut b = SeedRng::new(42);
        for _ in 0..50 {
            assert_eq!(space.sample(&mut a), space.sample(&mut b));
        }
    }

    #[test]
    fn neighborhood_is_clamped_into_the_space() {
        let space = SearchSpace::default();
        let boundary = TrialConfig {
            layers: 2,
            neurons: 32,
            learning_rate: 1e-4,
            dropout: 0.1,
            batch_size: 32,
            activation: Activation::Relu,
        };
        let (lrs, neurons, dropouts) = axis_values(&space, &boundary);
        assert_eq!(lrs.len() * neurons.len() * dropouts.len(), 27);
        assert!(lrs.iter().all(|&v| v >= 1e-4 && v <= 1e-2));
        assert!(neurons.iter().all(|&v| (32..=256).contains(&v)));
        assert!(dropouts.iter().all(|&v| (0.1..=0.5).contains(&v)));
    }

    #[test]
    fn ranking_prefers_low_rmse_then_gap_then_size() {
        let base = TrialResult {
            trial_id: 0,
            config: TrialConfig {
                layers: 2,
                neurons: 32,
                learning_rate: 1e-3,
                dropout: 0.1,
                batch_size: 32,
                activation: Activation::Relu,
            },
            fold_rmses: vec![],
            mean_val_rmse: 0.10,
            mean_train_rmse: 0.09,
            parameter_count: 100,
            status: TrialStatus::Ok,
            error: None,
        };
        let worse_rmse = TrialResult { mean_val_rmse: 0.2, ..base.clone() };
        let bigger_gap = TrialResult { mean_train_rmse: 0.01, ..base.clone() };
        let bigger_net = TrialResult { parameter_count: 999, ..base.clone() };
        let diverged = TrialResult {
            mean_val_rmse: f64::INFINITY,
            status: TrialStatus::Diverged,
            ..base.clone()
        };
        let mut all = vec![diverged, bigger_net.clone(), worse_rmse, bigger_gap, base.clone()];
        all.sort_by(better);
        assert_eq!(all[0], base);
        assert_eq!(all[1], bigger_net);
        assert_eq!(all.last().unwrap().status, TrialStatus::Diverged);
    }
}
