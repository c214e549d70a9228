//! Experiment protocol: chronological splits, the four-ratio sweep with
//! forward-chaining folds, per-fold confidence intervals, and the Friedman
//! comparison across models.

mod report;

pub use report::{emit_report, format_significant};

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{prepare, FeatureError, PipelineOptions, Prepared};
use crate::linalg::Matrix;
use crate::models::{
    arima_fit_forecast, build_model, make_windows, ModelError, ModelFamily, ModelSpec, WindowSpec,
};
use crate::nn::{fit, predict, rmse, NnError, TrainConfig};
use crate::rng::SeedRng;
use crate::stats::{confidence_interval, friedman_test, ConfidenceInterval, FriedmanResult, StatsError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split too small: {0}")]
    SplitTooSmall(String),
    #[error("ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("need at least two folds for confidence intervals")]
    TooFewFolds,
    #[error("no successfully evaluated models for {0}")]
    NothingToCompare(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cap on stored (actual, predicted) validation-tail pairs per cell, used
/// for the report plots.
const TAIL_CAP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub r_squared: f64,
    pub loss: f64,
    /// True when the evaluation target had zero variance and R^2 is
    /// reported as 0 by convention.
    pub degenerate_r2: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub train: Metrics,
    pub val: Metrics,
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let n = y_true.len().max(1) as f64;
    y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / n
}

/// R^2 = 1 - SS_res / SS_tot. A zero-variance target reports 0 with the
/// degeneracy flag instead of dividing by zero.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> (f64, bool) {
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return (0.0, true);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    (1.0 - ss_res / ss_tot, false)
}

fn metrics_of(y_true: &[f64], y_pred: &[f64], penalty: f64) -> Result<Metrics, EvalError> {
    let r = rmse(y_true, y_pred)?;
    let (r2, degenerate) = r_squared(y_true, y_pred);
    Ok(Metrics {
        rmse: r,
        mae: mae(y_true, y_pred),
        r_squared: r2,
        loss: r * r + penalty,
        degenerate_r2: degenerate,
    })
}

/// Forward-chaining folds: the validation block has the declared-ratio
/// size b for every fold, sliding so the k-th fold is exactly the
/// chronological split (train on the first n - b rows, validate on the
/// final b). Each fold trains on everything before its block.
pub fn forward_chain_folds(n_rows: usize, ratio: f64, k: usize) -> Vec<(usize, Range<usize>)> {
    let b = (ratio * n_rows as f64).floor() as usize;
    let head = n_rows - b;
    (1..=k)
        .map(|i| {
            let train_end = head * i / k;
            (train_end, train_end..train_end + b)
        })
        .collect()
}

/// Train budget override used by hyperparameter search trials.
#[derive(Debug, Clone, Copy)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub patience: usize,
}

pub struct CellRun {
    pub metrics: MetricSet,
    /// (actual, predicted) on the validation tail, capped, scaled units.
    pub val_tail: Vec<(f64, f64)>,
    /// Span (max - min) of the target scaling, for original-unit metrics.
    pub target_span: f64,
}

/// A fold with its transforms fitted: one of these is shared by every
/// model evaluated at the same (ratio, fold), since the plan depends only
/// on the training rows.
pub struct PreparedSplit {
    pub prepared: Prepared,
    /// Validation rows in the prepared (trimmed) coordinates.
    pub val_rows: Range<usize>,
    pub lookback: usize,
}

pub fn prepare_split(
    table: &crate::ingest::TimeSeriesTable,
    opts: &PipelineOptions,
    train_end: usize,
    val_rows: Range<usize>,
) -> Result<PreparedSplit, EvalError> {
    if train_end < 2 || val_rows.is_empty() || val_rows.end > table.n_rows() {
        return Err(EvalError::SplitTooSmall(format!(
            "train_end {train_end}, validation {val_rows:?} of {} rows",
            table.n_rows()
        )));
    }
    let prepared = prepare(table, 0..train_end, opts)?;
    let off = prepared.row_offset;
    let val_adj = val_rows.start.saturating_sub(off)..val_rows.end - off;
    Ok(PreparedSplit { prepared, val_rows: val_adj, lookback: opts.lookback })
}

/// Trains and scores one model on a prepared fold. Windows never straddle
/// the train/validation boundary; metrics are on the normalized scale.
pub fn run_prepared(
    spec: &ModelSpec,
    split: &PreparedSplit,
    seed: u64,
    budget: Option<TrainBudget>,
) -> Result<CellRun, EvalError> {
    let prepared = &split.prepared;
    let train_rows = prepared.train_rows.clone();
    let val_rows = split.val_rows.clone();
    let target_span = prepared
        .plan
        .scaling()
        .and_then(|s| s.columns.get(&prepared.target_column))
        .map(|e| e.max - e.min)
        .unwrap_or(1.0);

    if spec.family == ModelFamily::Arima {
        return run_arima_fold(spec, prepared, train_rows, val_rows, target_span);
    }

    let lookback = split.lookback;
    let d = prepared.features.cols;
    let slice = |range: Range<usize>| -> Matrix {
        Matrix {
            rows: range.len(),
            cols: d,
            data: prepared.features.data[range.start * d..range.end * d].to_vec(),
        }
    };
    let train_features = slice(train_rows.clone());
    let val_features = slice(val_rows.clone());
    let train_target = &prepared.target[train_rows.clone()];
    let val_target = &prepared.target[val_rows.clone()];

    if train_features.rows <= lookback + 1 || val_features.rows <= lookback {
        return Err(EvalError::SplitTooSmall(format!(
            "{} train rows / {} validation rows with lookback {lookback}",
            train_features.rows, val_features.rows
        )));
    }
    let train_w = make_windows(&train_features, train_target, lookback)?;
    let val_w = make_windows(&val_features, val_target, lookback)?;

    let root = SeedRng::new(seed);
    let window = WindowSpec::new(lookback, d);
    let mut model = build_model(spec, &window, root.derive(1).seed())?;
    let mut cfg: TrainConfig = spec.train_config(root.derive(2).seed(), lookback);
    if let Some(b) = budget {
        cfg.max_epochs = b.max_epochs;
        cfg.patience = b.patience;
    }
    fit(&mut model, &train_w, &val_w, &cfg)?;

    let train_pred = predict(&model, &train_w.x)?;
    let val_pred = predict(&model, &val_w.x)?;
    let penalty = crate::nn::l2_penalty(cfg.l2_lambda, &model.weight_tensors());

    let metrics = MetricSet {
        train: metrics_of(&train_w.y, &train_pred, penalty)?,
        val: metrics_of(&val_w.y, &val_pred, penalty)?,
    };
    let tail_start = val_w.y.len().saturating_sub(TAIL_CAP);
    let val_tail = val_w.y[tail_start..]
        .iter()
        .zip(&val_pred[tail_start..])
        .map(|(a, p)| (*a, *p))
        .collect();
    Ok(CellRun { metrics, val_tail, target_span })
}

/// Convenience wrapper: prepare one fold and run one model on it.
pub fn run_fold(
    spec: &ModelSpec,
    table: &crate::ingest::TimeSeriesTable,
    opts: &PipelineOptions,
    train_end: usize,
    val_rows: Range<usize>,
    seed: u64,
    budget: Option<TrainBudget>,
) -> Result<CellRun, EvalError> {
    let split = prepare_split(table, opts, train_end, val_rows)?;
    run_prepared(spec, &split, seed, budget)
}

fn run_arima_fold(
    spec: &ModelSpec,
    prepared: &Prepared,
    train_rows: Range<usize>,
    val_rows: Range<usize>,
    target_span: f64,
) -> Result<CellRun, EvalError> {
    // The baseline is univariate: it sees the same scaled target series the
    // networks predict, over exactly the same fold geometry.
    let series = &prepared.target[..val_rows.end];
    let fit = arima_fit_forecast(series, spec.arima_orders, train_rows, val_rows)?;
    let metrics = MetricSet {
        train: metrics_of(&fit.train_actual, &fit.train_fitted, 0.0)?,
        val: metrics_of(&fit.val_actual, &fit.val_forecast, 0.0)?,
    };
    let tail_start = fit.val_actual.len().saturating_sub(TAIL_CAP);
    let val_tail = fit.val_actual[tail_start..]
        .iter()
        .zip(&fit.val_forecast[tail_start..])
        .map(|(a, p)| (*a, *p))
        .collect();
    Ok(CellRun { metrics, val_tail, target_span })
}

/// The chronological split at `ratio`: the final fraction is validation.
pub fn split_point(n_rows: usize, ratio: f64) -> usize {
    n_rows - (ratio * n_rows as f64).floor() as usize
}

/// Scores a model at one chronological split: the final `ratio` fraction
/// of rows is the validation set.
pub fn evaluate_split(
    spec: &ModelSpec,
    table: &crate::ingest::TimeSeriesTable,
    opts: &PipelineOptions,
    ratio: f64,
    seed: u64,
    budget: Option<TrainBudget>,
) -> Result<MetricSet, EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let n = table.n_rows();
    let train_end = split_point(n, ratio);
    Ok(run_fold(spec, table, opts, train_end, train_end..n, seed, budget)?.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCi {
    pub rmse: ConfidenceInterval,
    pub mae: ConfidenceInterval,
    pub r_squared: ConfidenceInterval,
    pub loss: ConfidenceInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSetCi {
    pub train: MetricsCi,
    pub val: MetricsCi,
}

/// Per-metric 95% confidence intervals over fold scores.
pub fn crossval_ci(folds: &[MetricSet]) -> Result<MetricSetCi, EvalError> {
    if folds.len() < 2 {
        return Err(EvalError::TooFewFolds);
    }
    let ci = |pick: &dyn Fn(&MetricSet) -> f64| -> Result<ConfidenceInterval, EvalError> {
        let values: Vec<f64> = folds.iter().map(pick).collect();
        Ok(confidence_interval(&values)?)
    };
    Ok(MetricSetCi {
        train: MetricsCi {
            rmse: ci(&|m| m.train.rmse)?,
            mae: ci(&|m| m.train.mae)?,
            r_squared: ci(&|m| m.train.r_squared)?,
            loss: ci(&|m| m.train.loss)?,
        },
        val: MetricsCi {
            rmse: ci(&|m| m.val.rmse)?,
            mae: ci(&|m| m.val.mae)?,
            r_squared: ci(&|m| m.val.r_squared)?,
            loss: ci(&|m| m.val.loss)?,
        },
    })
}

fn mean_metrics(folds: &[MetricSet]) -> MetricSet {
    let n = folds.len() as f64;
    let avg = |pick: &dyn Fn(&MetricSet) -> f64| folds.iter().map(pick).sum::<f64>() / n;
    let degen = |pick: &dyn Fn(&MetricSet) -> bool| folds.iter().any(pick);
    MetricSet {
        train: Metrics {
            rmse: avg(&|m| m.train.rmse),
            mae: avg(&|m| m.train.mae),
            r_squared: avg(&|m| m.train.r_squared),
            loss: avg(&|m| m.train.loss),
            degenerate_r2: degen(&|m| m.train.degenerate_r2),
        },
        val: Metrics {
            rmse: avg(&|m| m.val.rmse),
            mae: avg(&|m| m.val.mae),
            r_squared: avg(&|m| m.val.r_squared),
            loss: avg(&|m| m.val.loss),
            degenerate_r2: degen(&|m| m.val.degenerate_r2),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub label: String,
    pub family: ModelFamily,
    pub regularized: bool,
    pub ratio: f64,
    pub fold_metrics: Vec<MetricSet>,
    pub mean: Option<MetricSet>,
    /// Present when k >= 2; single-fold cells report no interval.
    pub ci: Option<MetricSetCi>,
    pub error: Option<String>,
    /// (actual, predicted) tail of the final fold, normalized units.
    pub val_tail: Vec<(f64, f64)>,
    /// Validation RMSE rescaled to original target units.
    pub denormalized_val_rmse: Option<f64>,
}

/// Per-model, per-ratio metric sets with confidence intervals; the primary
/// experimental artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSweepReport {
    pub labels: Vec<String>,
    pub ratios: Vec<f64>,
    pub k: usize,
    pub cells: Vec<SweepCell>,
}

impl RatioSweepReport {
    pub fn cell(&self, label: &str, ratio: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.label == label && c.ratio == ratio)
    }

    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }
}

/// One fitted transform plan per (ratio, fold) for the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub ratio: f64,
    pub fold: usize,
    pub plan: crate::features::TransformPlan,
}

pub struct SweepOutput {
    pub report: RatioSweepReport,
    pub plans: Vec<PlanEntry>,
}

/// Runs the full (model x ratio) sweep with k forward-chaining folds per
/// cell. Transforms are fitted once per (ratio, fold) and shared by every
/// model. Failures are recorded on their cell and the sweep continues.
/// Cells own disjoint seeds derived from (spec, ratio, fold), so any
/// execution schedule produces identical results.
pub fn ratio_sweep(
    specs: &[ModelSpec],
    table: &crate::ingest::TimeSeriesTable,
    opts: &PipelineOptions,
    ratios: &[f64],
    k: usize,
    seed: u64,
    jobs: usize,
) -> SweepOutput {
    let root = SeedRng::new(seed);
    let mut cells: Vec<SweepCell> = specs
        .iter()
        .flat_map(|spec| {
            ratios.iter().map(|&ratio| SweepCell {
                label: spec.label(),
                family: spec.family,
                regularized: spec.regularized,
                ratio,
                fold_metrics: Vec::new(),
                mean: None,
                ci: None,
                error: None,
                val_tail: Vec::new(),
                denormalized_val_rmse: None,
            })
        })
        .collect();
    let mut plans = Vec::new();

    for (ri, &ratio) in ratios.iter().enumerate() {
        let folds = forward_chain_folds(table.n_rows(), ratio, k.max(1));
        for (fi, (train_end, val_rows)) in folds.into_iter().enumerate() {
            let split = match prepare_split(table, opts, train_end, val_rows) {
                Ok(split) => split,
                Err(e) => {
                    // the whole fold is unusable; mark every cell
                    for (si, _) in specs.iter().enumerate() {
                        cells[si * ratios.len() + ri].error = Some(e.to_string());
                    }
                    continue;
                }
            };
            plans.push(PlanEntry { ratio, fold: fi, plan: split.prepared.plan.clone() });

            let results: Vec<Result<CellRun, EvalError>> = if jobs > 1 {
                run_specs_parallel(specs, &split, &root, ri, fi, jobs)
            } else {
                specs
                    .iter()
                    .enumerate()
                    .map(|(si, spec)| {
                        let label = cell_seed_label(si, ri, fi);
                        run_prepared(spec, &split, root.derive(label).seed(), None)
                    })
                    .collect()
            };
            for (si, result) in results.into_iter().enumerate() {
                let cell = &mut cells[si * ratios.len() + ri];
                match result {
                    Ok(run) => {
                        cell.fold_metrics.push(run.metrics);
                        cell.val_tail = run.val_tail;
                        cell.denormalized_val_rmse =
                            Some(run.metrics.val.rmse * run.target_span);
                    }
                    Err(e) => {
                        cell.error = Some(e.to_string());
                    }
                }
            }
        }
    }

    for cell in &mut cells {
        if cell.error.is_none() && !cell.fold_metrics.is_empty() {
            cell.mean = Some(mean_metrics(&cell.fold_metrics));
            if cell.fold_metrics.len() >= 2 {
                cell.ci = crossval_ci(&cell.fold_metrics).ok();
            }
        }
    }

    let report = RatioSweepReport {
        labels: specs.iter().map(|s| s.label()).collect(),
        ratios: ratios.to_vec(),
        k,
        cells,
    };
    SweepOutput { report, plans }
}

fn cell_seed_label(spec_idx: usize, ratio_idx: usize, fold_idx: usize) -> u64 {
    ((spec_idx as u64) << 32) | ((ratio_idx as u64) << 16) | fold_idx as u64
}

fn run_specs_parallel(
    specs: &[ModelSpec],
    split: &PreparedSplit,
    root: &SeedRng,
    ratio_idx: usize,
    fold_idx: usize,
    jobs: usize,
) -> Vec<Result<CellRun, EvalError>> {
    let mut results: Vec<Option<Result<CellRun, EvalError>>> =
        (0..specs.len()).map(|_| None).collect();
    let chunk_size = specs.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_idx, chunk) in results.chunks_mut(chunk_size).enumerate() {
            let start = chunk_idx * chunk_size;
            handles.push(scope.spawn(move || {
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    let si = start + offset;
                    let label = cell_seed_label(si, ratio_idx, fold_idx);
                    *slot = Some(run_prepared(&specs[si], split, root.derive(label).seed(), None));
                }
            }));
        }
        for h in handles {
            h.join().expect("sweep worker panicked");
        }
    });
    results.into_iter().map(|r| r.expect("all slots filled")).collect()
}

/// Metric columns compared by the Friedman test, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricColumn {
    TrainRmse,
    ValRmse,
    TrainMae,
    ValMae,
    TrainRSquared,
    ValRSquared,
    TrainLoss,
    ValLoss,
}

impl MetricColumn {
    pub const ALL: [MetricColumn; 8] = [
        MetricColumn::TrainRmse,
        MetricColumn::ValRmse,
        MetricColumn::TrainMae,
        MetricColumn::ValMae,
        MetricColumn::TrainRSquared,
        MetricColumn::ValRSquared,
        MetricColumn::TrainLoss,
        MetricColumn::ValLoss,
    ];

    pub fn title(&self) -> &'static str {
        match self {
            MetricColumn::TrainRmse => "Train RMSE",
            MetricColumn::ValRmse => "Validation RMSE",
            MetricColumn::TrainMae => "Train MAE",
            MetricColumn::ValMae => "Validation MAE",
            MetricColumn::TrainRSquared => "Train R-Square",
            MetricColumn::ValRSquared => "Validation R-Square",
            MetricColumn::TrainLoss => "Train Loss",
            MetricColumn::ValLoss => "Validation Loss",
        }
    }

    pub fn lower_is_better(&self) -> bool {
        !matches!(self, MetricColumn::TrainRSquared | MetricColumn::ValRSquared)
    }

    pub fn pick(&self, m: &MetricSet) -> f64 {
        match self {
            MetricColumn::TrainRmse => m.train.rmse,
            MetricColumn::ValRmse => m.val.rmse,
            MetricColumn::TrainMae => m.train.mae,
            MetricColumn::ValMae => m.val.mae,
            MetricColumn::TrainRSquared => m.train.r_squared,
            MetricColumn::ValRSquared => m.val.r_squared,
            MetricColumn::TrainLoss => m.train.loss,
            MetricColumn::ValLoss => m.val.loss,
        }
    }
}

/// Friedman test over the sweep: ratios are the blocks, models the
/// treatments, scores the fold-mean of the chosen metric. Models with any
/// failed cell are excluded from the comparison.
pub fn friedman_from_report(
    report: &RatioSweepReport,
    column: MetricColumn,
) -> Result<FriedmanResult, EvalError> {
    let ratios = &report.ratios;
    let healthy: Vec<&String> = report
        .labels
        .iter()
        .filter(|label| {
            ratios.iter().all(|&r| {
                report.cell(label, r).map(|c| c.error.is_none() && c.mean.is_some()).unwrap_or(false)
            })
        })
        .collect();
    if healthy.len() < 2 {
        return Err(EvalError::NothingToCompare(column.title().to_string()));
    }

    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let row: Vec<f64> = healthy
            .iter()
            .map(|label| column.pick(report.cell(label, ratio).unwrap().mean.as_ref().unwrap()))
            .collect();
        rows.push(row);
    }
    let scores = Matrix::from_rows(&rows);
    Ok(friedman_test(&scores, column.lower_is_better())?)
}

/// The standard Friedman table: one row per metric column.
pub fn friedman_table(report: &RatioSweepReport) -> Vec<(String, Result<FriedmanResult, EvalError>)> {
    MetricColumn::ALL
        .iter()
        .map(|col| (col.title().to_string(), friedman_from_report(report, *col)))
        .collect()
}
