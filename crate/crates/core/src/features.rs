//! Feature transforms with a strict train-only-fit contract.
//!
//! Every parameter here (scaling extrema, encoder maps, differencing
//! orders, drop decisions) is fitted on the training row range only and
//! recorded in a [`TransformPlan`]. Replaying a plan on the training
//! partition reproduces the training design matrix exactly; replaying it
//! on later rows applies the frozen parameters without refitting.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    impute_gaps, Column, ColumnKind, ColumnMeta, ColumnValues, ImputationRecord, IngestError,
    TimeSeriesTable,
};
use crate::linalg::Matrix;
use crate::stats::{
    pca_fit, pca_project, pearson, stationarity_report, PcaModel, StationarityReport, StatsError,
    Verdict,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty training range")]
    EmptyTrainRange,
    #[error("column {0} was not fitted")]
    UnfittedColumn(String),
    #[error("column {0} still contains missing values; enable imputation")]
    MissingValues(String),
    #[error("no timestamp column")]
    NoTimestamp,
    #[error("target column {0} has missing values in the training range")]
    TargetMissingInTrain(String),
    #[error("series is still non-stationary after differencing twice")]
    StillNonStationary,
    #[error("validation target has zero variance")]
    ZeroVarianceTarget,
    #[error("table has no target column")]
    NoTargetColumn,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ---------------------------------------------------------------------------
// Min-max scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleDirection {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxEntry {
    pub min: f64,
    pub max: f64,
}

/// Per-column extrema fitted on training rows only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub columns: BTreeMap<String, MinMaxEntry>,
}

pub fn fit_minmax(
    table: &TimeSeriesTable,
    train_rows: Range<usize>,
) -> Result<ScalingParams, FeatureError> {
    if train_rows.is_empty() || train_rows.end > table.n_rows() {
        return Err(FeatureError::EmptyTrainRange);
    }
    let mut columns = BTreeMap::new();
    for c in table.columns() {
        let values = match (&c.meta.kind, &c.values) {
            (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v)) => v,
            _ => continue,
        };
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values[train_rows.clone()].iter().flatten() {
            min = min.min(*v);
            max = max.max(*v);
        }
        if min.is_finite() {
            columns.insert(c.meta.name.clone(), MinMaxEntry { min, max });
        }
    }
    Ok(ScalingParams { columns })
}

/// Affine map to [0, 1] and back. Degenerate columns (max == min) map
/// forward to 0.0, keeping the pipeline total; such a column carries no
/// information either way.
pub fn scale(
    values: &[f64],
    column: &str,
    params: &ScalingParams,
    direction: ScaleDirection,
) -> Result<Vec<f64>, FeatureError> {
    let entry = params
        .columns
        .get(column)
        .ok_or_else(|| FeatureError::UnfittedColumn(column.to_string()))?;
    let span = entry.max - entry.min;
    Ok(match direction {
        ScaleDirection::Forward => values
            .iter()
            .map(|v| if span > 0.0 { (v - entry.min) / span } else { 0.0 })
            .collect(),
        ScaleDirection::Inverse => values.iter().map(|v| entry.min + v * span).collect(),
    })
}

fn apply_minmax(
    table: &TimeSeriesTable,
    params: &ScalingParams,
) -> Result<TimeSeriesTable, FeatureError> {
    let mut out = table.clone();
    for c in table.columns() {
        if let (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v)) =
            (&c.meta.kind, &c.values)
        {
            let dense: Vec<f64> = v
                .iter()
                .map(|x| x.ok_or_else(|| FeatureError::MissingValues(c.meta.name.clone())))
                .collect::<Result<_, _>>()?;
            let scaled = scale(&dense, &c.meta.name, params, ScaleDirection::Forward)?;
            out.replace_column(
                &c.meta.name,
                c.meta.kind,
                ColumnValues::Float(scaled.into_iter().map(Some).collect()),
            )?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Leave-one-out target encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub target_sum: f64,
    pub count: u32,
}

/// Per-category target sums over training rows plus the global training
/// mean for unseen categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEncoderMap {
    pub column: String,
    pub target: String,
    pub map: BTreeMap<String, LooEntry>,
    pub global_target_mean: f64,
}

impl LooEncoderMap {
    /// Encoding for a row. Training rows of categories seen at least twice
    /// exclude their own target; everything else uses the plain category
    /// mean, and unseen categories fall back to the global mean.
    fn encode_row(&self, label: Option<&str>, target: Option<f64>, in_train: bool) -> f64 {
        let Some(label) = label else { return self.global_target_mean };
        let Some(entry) = self.map.get(label) else { return self.global_target_mean };
        if in_train && entry.count >= 2 {
            if let Some(y) = target {
                return (entry.target_sum - y) / (entry.count as f64 - 1.0);
            }
        }
        entry.target_sum / entry.count as f64
    }
}

/// Fits the encoder on training rows and encodes the whole column.
pub fn loo_encode(
    table: &TimeSeriesTable,
    cat_column: &str,
    target_column: &str,
    train_rows: Range<usize>,
) -> Result<(Vec<f64>, LooEncoderMap), FeatureError> {
    let labels = match &table
        .column(cat_column)
        .ok_or_else(|| FeatureError::UnfittedColumn(cat_column.to_string()))?
        .values
    {
        ColumnValues::Label(v) => v,
        _ => return Err(FeatureError::UnfittedColumn(cat_column.to_string())),
    };
    let target = table
        .float_column(target_column)
        .ok_or_else(|| FeatureError::UnfittedColumn(target_column.to_string()))?;

    let mut map: BTreeMap<String, LooEntry> = BTreeMap::new();
    let mut total = 0.0;
    let mut count = 0u32;
    for i in train_rows.clone() {
        let y = target[i]
            .ok_or_else(|| FeatureError::TargetMissingInTrain(target_column.to_string()))?;
        total += y;
        count += 1;
        if let Some(label) = &labels[i] {
            let entry = map.entry(label.clone()).or_insert(LooEntry { target_sum: 0.0, count: 0 });
            entry.target_sum += y;
            entry.count += 1;
        }
    }
    if count == 0 {
        return Err(FeatureError::EmptyTrainRange);
    }
    let encoder = LooEncoderMap {
        column: cat_column.to_string(),
        target: target_column.to_string(),
        map,
        global_target_mean: total / count as f64,
    };

    let encoded = encode_with(&encoder, labels, target, &train_rows);
    Ok((encoded, encoder))
}

fn encode_with(
    encoder: &LooEncoderMap,
    labels: &[Option<String>],
    target: &[Option<f64>],
    train_rows: &Range<usize>,
) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, label)| encoder.encode_row(label.as_deref(), target[i], train_rows.contains(&i)))
        .collect()
}

// ---------------------------------------------------------------------------
// Cyclical and calendar features
// ---------------------------------------------------------------------------

const CALENDAR_COLUMNS: [&str; 8] = [
    "sine_hr",
    "cos_hr",
    "sine_mon",
    "cos_mon",
    "is_weekend",
    "Season_Spring",
    "Season_Summer",
    "Season_Winter",
];

/// Appends trigonometric hour/month encodings, a weekend flag, and
/// meteorological season one-hots (autumn is the omitted reference level).
/// Columns the table already carries (panel data often ships its own
/// sine/cos and season flags) are left untouched.
pub fn add_cyclical_calendar(table: &TimeSeriesTable) -> Result<TimeSeriesTable, FeatureError> {
    let timestamps = table.timestamps().to_vec();
    if timestamps.is_empty() {
        return Err(FeatureError::NoTimestamp);
    }
    let mut out = table.clone();
    let mut new_values: BTreeMap<&str, Vec<Option<f64>>> =
        CALENDAR_COLUMNS.iter().map(|&n| (n, Vec::with_capacity(timestamps.len()))).collect();

    for &ts in &timestamps {
        let dt = DateTime::from_timestamp(ts, 0).ok_or(FeatureError::NoTimestamp)?;
        let hour = dt.hour() as f64;
        let month = dt.month();
        let hour_phase = 2.0 * std::f64::consts::PI * hour / 24.0;
        // Month phase anchors January at 0.
        let month_phase = 2.0 * std::f64::consts::PI * (month as f64 - 1.0) / 12.0;
        let weekday = dt.weekday().num_days_from_monday();
        let (spring, summer, winter) = match month {
            3..=5 => (1.0, 0.0, 0.0),
            6..=8 => (0.0, 1.0, 0.0),
            12 | 1 | 2 => (0.0, 0.0, 1.0),
            _ => (0.0, 0.0, 0.0), // autumn: reference level
        };
        new_values.get_mut("sine_hr").unwrap().push(Some(hour_phase.sin()));
        new_values.get_mut("cos_hr").unwrap().push(Some(hour_phase.cos()));
        new_values.get_mut("sine_mon").unwrap().push(Some(month_phase.sin()));
        new_values.get_mut("cos_mon").unwrap().push(Some(month_phase.cos()));
        new_values
            .get_mut("is_weekend")
            .unwrap()
            .push(Some(if weekday >= 5 { 1.0 } else { 0.0 }));
        new_values.get_mut("Season_Spring").unwrap().push(Some(spring));
        new_values.get_mut("Season_Summer").unwrap().push(Some(summer));
        new_values.get_mut("Season_Winter").unwrap().push(Some(winter));
    }

    for name in CALENDAR_COLUMNS {
        if out.column(name).is_some() {
            continue;
        }
        out.push_column(
            ColumnMeta::new(name, ColumnKind::Continuous),
            ColumnValues::Float(new_values.remove(name).unwrap()),
        )?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stationarity adjustment
// ---------------------------------------------------------------------------

pub fn difference(series: &[f64], order: u8) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..order {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Inverts `difference` given the original leading values (the first
/// `order` entries of the untransformed series).
pub fn undifference(diffed: &[f64], order: u8, initial: &[f64]) -> Vec<f64> {
    assert_eq!(initial.len(), order as usize, "need one seed value per order");
    let mut out = diffed.to_vec();
    for level in (0..order).rev() {
        let seed = seed_at_level(initial, level);
        let mut acc = seed;
        let mut rebuilt = Vec::with_capacity(out.len() + 1);
        rebuilt.push(acc);
        for d in &out {
            acc += d;
            rebuilt.push(acc);
        }
        out = rebuilt;
    }
    out
}

/// First value of the `level`-times differenced series, derived from the
/// original leading values.
fn seed_at_level(initial: &[f64], level: u8) -> f64 {
    let mut work = initial.to_vec();
    for _ in 0..level {
        work = work.windows(2).map(|w| w[1] - w[0]).collect();
    }
    work[0]
}

/// A numerically constant series is trivially stationary but degenerate
/// for both tests, so it short-circuits to verdict stationary.
fn is_effectively_constant(series: &[f64]) -> bool {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var < 1e-18
}

fn verdict_of(series: &[f64]) -> Result<Verdict, FeatureError> {
    if is_effectively_constant(series) {
        return Ok(Verdict::Stationary);
    }
    match stationarity_report(series) {
        Ok(report) => Ok(report.verdict),
        // Degenerate and singular cases arise on near-constant series.
        Err(StatsError::DegenerateSeries) | Err(StatsError::SingularDesign) => {
            Ok(Verdict::Stationary)
        }
        Err(e) => Err(e.into()),
    }
}

/// Differences a series until the joint stationarity rule is satisfied, up
/// to order two. Returns the transformed series and the applied order; the
/// inversion seed is recorded by the caller in the transform plan.
pub fn stationarize(
    series: &[f64],
    report: &StationarityReport,
) -> Result<(Vec<f64>, u8), FeatureError> {
    if report.verdict == Verdict::Stationary {
        return Ok((series.to_vec(), 0));
    }
    let mut current = series.to_vec();
    for order in 1..=2u8 {
        current = difference(&current, 1);
        if verdict_of(&current)? == Verdict::Stationary {
            return Ok((current, order));
        }
    }
    Err(FeatureError::StillNonStationary)
}

// ---------------------------------------------------------------------------
// Correlation filter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Feature names plus the target as the final entry.
    pub names: Vec<String>,
    /// Pearson correlations; degenerate pairs are reported as 0.
    pub matrix: Vec<Vec<f64>>,
}

pub struct FilterOutcome {
    pub table: TimeSeriesTable,
    pub dropped: Vec<String>,
    pub report: CorrelationReport,
}

/// Drops continuous features whose absolute Pearson correlation with the
/// target over training rows falls below the threshold. Also produces the
/// full feature-by-feature correlation matrix for the run manifest.
pub fn correlation_filter(
    table: &TimeSeriesTable,
    target_column: &str,
    threshold: f64,
    train_rows: Range<usize>,
) -> Result<FilterOutcome, FeatureError> {
    let target_full = table
        .float_column(target_column)
        .ok_or_else(|| FeatureError::UnfittedColumn(target_column.to_string()))?;
    let target: Vec<f64> = target_full[train_rows.clone()]
        .iter()
        .map(|v| v.ok_or_else(|| FeatureError::TargetMissingInTrain(target_column.to_string())))
        .collect::<Result<_, _>>()?;
    let t_mean = target.iter().sum::<f64>() / target.len() as f64;
    if target.iter().all(|v| (v - t_mean).abs() < 1e-300) {
        return Err(FeatureError::ZeroVarianceTarget);
    }

    let mut names = Vec::new();
    let mut series: Vec<Vec<f64>> = Vec::new();
    for c in table.feature_columns() {
        if let ColumnValues::Float(v) = &c.values {
            let dense: Vec<f64> = v[train_rows.clone()]
                .iter()
                .map(|x| x.ok_or_else(|| FeatureError::MissingValues(c.meta.name.clone())))
                .collect::<Result<_, _>>()?;
            names.push(c.meta.name.clone());
            series.push(dense);
        }
    }

    let mut dropped = Vec::new();
    for (name, values) in names.iter().zip(&series) {
        let r = pearson(values, &target).unwrap_or(0.0);
        if r.abs() < threshold {
            dropped.push(name.clone());
        }
    }

    // feature x feature matrix, target appended last
    let mut all_names = names.clone();
    all_names.push(target_column.to_string());
    let mut all_series: Vec<&[f64]> = series.iter().map(|v| v.as_slice()).collect();
    all_series.push(&target);
    let k = all_series.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j {
                1.0
            } else {
                pearson(all_series[i], all_series[j]).unwrap_or(0.0)
            };
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }

    Ok(FilterOutcome {
        table: table.without_columns(&dropped),
        dropped,
        report: CorrelationReport { names: all_names, matrix },
    })
}

// ---------------------------------------------------------------------------
// Transform plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformRecord {
    Impute(ImputationRecord),
    Calendar,
    LooEncode(LooEncoderMap),
    Difference { column: String, order: u8, initial: Vec<f64> },
    MinMax(ScalingParams),
    CorrelationDrop { threshold: f64, dropped: Vec<String> },
    Pca(PcaModel),
}

/// Ordered, replayable record of fitted transforms. Append-only once
/// fitting ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub fit_rows: (usize, usize),
    pub records: Vec<TransformRecord>,
}

impl TransformPlan {
    fn fit_range(&self) -> Range<usize> {
        self.fit_rows.0..self.fit_rows.1
    }

    pub fn differencing_order(&self, column: &str) -> u8 {
        self.records
            .iter()
            .find_map(|r| match r {
                TransformRecord::Difference { column: c, order, .. } if c == column => Some(*order),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn scaling(&self) -> Option<&ScalingParams> {
        self.records.iter().find_map(|r| match r {
            TransformRecord::MinMax(p) => Some(p),
            _ => None,
        })
    }
}

/// Pipeline switches; scaling and calendar features are always applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub impute: bool,
    pub encode: bool,
    pub stationarize: bool,
    pub correlation_filter: bool,
    pub pca: bool,
    pub sparse_threshold: f64,
    pub corr_threshold: f64,
    pub variance_target: f64,
    pub lookback: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            impute: true,
            encode: true,
            stationarize: true,
            correlation_filter: true,
            pca: false,
            sparse_threshold: 0.15,
            corr_threshold: 0.1,
            variance_target: 0.80,
            lookback: 24,
        }
    }
}

/// Model-ready data: a dense feature matrix (scaled target history first,
/// then the surviving features or principal components), the scaled target
/// vector, and the plan that produced them.
pub struct Prepared {
    pub features: Matrix,
    pub feature_names: Vec<String>,
    pub target: Vec<f64>,
    pub target_column: String,
    /// Rows trimmed from the front of the table by differencing.
    pub row_offset: usize,
    /// Training rows in trimmed coordinates.
    pub train_rows: Range<usize>,
    pub plan: TransformPlan,
    pub correlation: Option<CorrelationReport>,
    pub stationarity: Vec<(String, StationarityReport, u8)>,
}

/// Fits every transform on `train_rows` and applies them to the whole
/// table.
pub fn prepare(
    table: &TimeSeriesTable,
    train_rows: Range<usize>,
    opts: &PipelineOptions,
) -> Result<Prepared, FeatureError> {
    if train_rows.is_empty() || train_rows.end > table.n_rows() {
        return Err(FeatureError::EmptyTrainRange);
    }
    let target_column = table
        .target_columns()
        .first()
        .map(|c| c.meta.name.clone())
        .ok_or(FeatureError::NoTargetColumn)?;

    let mut plan =
        TransformPlan { fit_rows: (train_rows.start, train_rows.end), records: Vec::new() };
    let mut work = table.clone();

    if opts.impute {
        let (imputed, record) = impute_gaps(&work, train_rows.clone())?;
        work = imputed;
        plan.records.push(TransformRecord::Impute(record));
    }

    work = add_cyclical_calendar(&work)?;
    plan.records.push(TransformRecord::Calendar);

    if opts.encode {
        let cat_names: Vec<String> =
            work.categorical_columns().iter().map(|c| c.meta.name.clone()).collect();
        for name in cat_names {
            let (encoded, encoder) = loo_encode(&work, &name, &target_column, train_rows.clone())?;
            work.replace_column(
                &name,
                ColumnKind::Continuous,
                ColumnValues::Float(encoded.into_iter().map(Some).collect()),
            )?;
            plan.records.push(TransformRecord::LooEncode(encoder));
        }
    }

    let mut stationarity = Vec::new();
    let mut max_order = 0u8;
    if opts.stationarize {
        let float_names: Vec<String> = work
            .columns()
            .iter()
            .filter(|c| matches!(c.meta.kind, ColumnKind::Continuous | ColumnKind::Target))
            .map(|c| c.meta.name.clone())
            .collect();
        for name in float_names {
            let full = dense(&work, &name)?;
            let train_slice = &full[train_rows.clone()];
            if is_effectively_constant(train_slice) {
                continue;
            }
            let report = match stationarity_report(train_slice) {
                Ok(r) => r,
                Err(StatsError::DegenerateSeries) | Err(StatsError::SingularDesign) => continue,
                Err(e) => return Err(e.into()),
            };
            let (_, order) = stationarize(train_slice, &report)?;
            stationarity.push((name.clone(), report, order));
            if order > 0 {
                let initial = full[..order as usize].to_vec();
                let diffed = difference(&full, order);
                // keep index alignment: row i holds the difference ending at i
                let mut aligned = vec![None; order as usize];
                aligned.extend(diffed.into_iter().map(Some));
                let kind = work.column(&name).unwrap().meta.kind;
                work.replace_column(&name, kind, ColumnValues::Float(aligned))?;
                plan.records.push(TransformRecord::Difference { column: name, order, initial });
                max_order = max_order.max(order);
            }
        }
    }

    // Trim the rows lost to differencing so every column is dense again.
    let row_offset = max_order as usize;
    if row_offset > 0 {
        work = work.slice_rows(row_offset..work.n_rows());
    }
    let adj_train =
        train_rows.start.saturating_sub(row_offset)..train_rows.end.saturating_sub(row_offset);

    let scaling = fit_minmax(&work, adj_train.clone())?;
    work = apply_minmax(&work, &scaling)?;
    plan.records.push(TransformRecord::MinMax(scaling));

    let mut correlation = None;
    if opts.correlation_filter {
        let outcome =
            correlation_filter(&work, &target_column, opts.corr_threshold, adj_train.clone())?;
        plan.records.push(TransformRecord::CorrelationDrop {
            threshold: opts.corr_threshold,
            dropped: outcome.dropped.clone(),
        });
        correlation = Some(outcome.report);
        work = outcome.table;
    }

    let (features, feature_names) = assemble_matrix(
        &work,
        &target_column,
        opts.pca,
        opts.variance_target,
        &adj_train,
        &mut plan,
    )?;
    let target = dense(&work, &target_column)?;

    Ok(Prepared {
        features,
        feature_names,
        target,
        target_column,
        row_offset,
        train_rows: adj_train,
        plan,
        correlation,
        stationarity,
    })
}

/// Applies a fitted plan to a table without refitting anything. Training
/// rows (per the plan's fit range) keep leave-one-out self-exclusion so the
/// training design matrix is reproduced bit for bit.
pub fn replay(table: &TimeSeriesTable, plan: &TransformPlan) -> Result<Prepared, FeatureError> {
    let target_column = table
        .target_columns()
        .first()
        .map(|c| c.meta.name.clone())
        .ok_or(FeatureError::NoTargetColumn)?;
    let fit_range = plan.fit_range();
    let mut work = table.clone();
    let mut row_offset = 0usize;
    let mut projected: Option<Matrix> = None;

    for record in &plan.records {
        match record {
            TransformRecord::Impute(rec) => {
                work = impute_with_record(&work, rec)?;
            }
            TransformRecord::Calendar => {
                work = add_cyclical_calendar(&work)?;
            }
            TransformRecord::LooEncode(encoder) => {
                let labels = match &work
                    .column(&encoder.column)
                    .ok_or_else(|| FeatureError::UnfittedColumn(encoder.column.clone()))?
                    .values
                {
                    ColumnValues::Label(v) => v.clone(),
                    _ => return Err(FeatureError::UnfittedColumn(encoder.column.clone())),
                };
                let target = work
                    .float_column(&encoder.target)
                    .ok_or_else(|| FeatureError::UnfittedColumn(encoder.target.clone()))?
                    .to_vec();
                let encoded = encode_with(encoder, &labels, &target, &fit_range);
                work.replace_column(
                    &encoder.column,
                    ColumnKind::Continuous,
                    ColumnValues::Float(encoded.into_iter().map(Some).collect()),
                )?;
            }
            TransformRecord::Difference { column, order, .. } => {
                let full = dense(&work, column)?;
                let diffed = difference(&full, *order);
                let mut aligned = vec![None; *order as usize];
                aligned.extend(diffed.into_iter().map(Some));
                let kind = work.column(column).unwrap().meta.kind;
                work.replace_column(column, kind, ColumnValues::Float(aligned))?;
                row_offset = row_offset.max(*order as usize);
            }
            TransformRecord::MinMax(params) => {
                if row_offset > 0 {
                    work = work.slice_rows(row_offset..work.n_rows());
                }
                work = apply_minmax(&work, params)?;
            }
            TransformRecord::CorrelationDrop { dropped, .. } => {
                work = work.without_columns(dropped);
            }
            TransformRecord::Pca(model) => {
                let (matrix, _) = feature_matrix(&work, &target_column)?;
                projected = Some(pca_project(model, &matrix)?);
            }
        }
    }

    let adj_train =
        fit_range.start.saturating_sub(row_offset)..fit_range.end.saturating_sub(row_offset);
    let (features, feature_names) = match projected {
        Some(p) => {
            let comp_names: Vec<String> = (0..p.cols).map(|i| format!("pc{}", i + 1)).collect();
            with_target_history(&work, &target_column, p, comp_names)?
        }
        None => {
            let (matrix, names) = feature_matrix(&work, &target_column)?;
            with_target_history(&work, &target_column, matrix, names)?
        }
    };
    let target = dense(&work, &target_column)?;

    Ok(Prepared {
        features,
        feature_names,
        target,
        target_column,
        row_offset,
        train_rows: adj_train,
        plan: plan.clone(),
        correlation: None,
        stationarity: Vec::new(),
    })
}

fn dense(table: &TimeSeriesTable, name: &str) -> Result<Vec<f64>, FeatureError> {
    let col = table
        .float_column(name)
        .ok_or_else(|| FeatureError::UnfittedColumn(name.to_string()))?;
    col.iter().map(|v| v.ok_or_else(|| FeatureError::MissingValues(name.to_string()))).collect()
}

/// All continuous feature columns as a dense matrix (target excluded).
fn feature_matrix(
    table: &TimeSeriesTable,
    target_column: &str,
) -> Result<(Matrix, Vec<String>), FeatureError> {
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for c in table.feature_columns() {
        if c.meta.name == target_column {
            continue;
        }
        names.push(c.meta.name.clone());
        columns.push(dense(table, &c.meta.name)?);
    }
    let n = table.n_rows();
    let mut m = Matrix::zeros(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            m.set(i, j, *v);
        }
    }
    Ok((m, names))
}

/// Final design matrix: scaled target history first, then the feature set.
fn with_target_history(
    table: &TimeSeriesTable,
    target_column: &str,
    features: Matrix,
    names: Vec<String>,
) -> Result<(Matrix, Vec<String>), FeatureError> {
    let target = dense(table, target_column)?;
    let n = features.rows;
    let mut out = Matrix::zeros(n, features.cols + 1);
    for i in 0..n {
        out.set(i, 0, target[i]);
        for j in 0..features.cols {
            out.set(i, j + 1, features.get(i, j));
        }
    }
    let mut out_names = vec![target_column.to_string()];
    out_names.extend(names);
    Ok((out, out_names))
}

fn assemble_matrix(
    table: &TimeSeriesTable,
    target_column: &str,
    use_pca: bool,
    variance_target: f64,
    train_rows: &Range<usize>,
    plan: &mut TransformPlan,
) -> Result<(Matrix, Vec<String>), FeatureError> {
    let (matrix, names) = feature_matrix(table, target_column)?;
    if !use_pca || matrix.cols == 0 {
        return with_target_history(table, target_column, matrix, names);
    }
    let train_matrix = Matrix {
        rows: train_rows.len(),
        cols: matrix.cols,
        data: matrix.data[train_rows.start * matrix.cols..train_rows.end * matrix.cols].to_vec(),
    };
    let model = pca_fit(&train_matrix, variance_target)?;
    let projected = pca_project(&model, &matrix)?;
    let comp_names: Vec<String> =
        (0..model.n_components()).map(|i| format!("pc{}", i + 1)).collect();
    plan.records.push(TransformRecord::Pca(model));
    with_target_history(table, target_column, projected, comp_names)
}

/// Replays imputation with frozen means/modes.
fn impute_with_record(
    table: &TimeSeriesTable,
    record: &ImputationRecord,
) -> Result<TimeSeriesTable, FeatureError> {
    const MAX_FFILL_RUN: usize = 3;
    let mut columns = Vec::with_capacity(table.columns().len());
    for c in table.columns() {
        let values = match (&c.meta.kind, &c.values) {
            (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v))
                if v.iter().any(|x| x.is_none()) =>
            {
                let fallback = record.means.get(&c.meta.name).copied();
                let filled = fill_float_runs(v, MAX_FFILL_RUN, fallback)
                    .ok_or_else(|| IngestError::AllMissingColumn(c.meta.name.clone()))?;
                ColumnValues::Float(filled.into_iter().map(Some).collect())
            }
            (ColumnKind::Categorical, ColumnValues::Label(v)) if v.iter().any(|x| x.is_none()) => {
                let fallback = record.modes.get(&c.meta.name).cloned();
                let filled = fill_label_runs(v, MAX_FFILL_RUN, fallback)
                    .ok_or_else(|| IngestError::AllMissingColumn(c.meta.name.clone()))?;
                ColumnValues::Label(filled.into_iter().map(Some).collect())
            }
            _ => c.values.clone(),
        };
        columns.push(Column { meta: c.meta.clone(), values });
    }
    Ok(TimeSeriesTable::new(columns, table.frequency())?)
}

fn fill_float_runs(v: &[Option<f64>], max_run: usize, fallback: Option<f64>) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(v.len());
    let mut i = 0;
    let mut last: Option<f64> = None;
    while i < v.len() {
        match v[i] {
            Some(x) => {
                out.push(x);
                last = Some(x);
                i += 1;
            }
            None => {
                let start = i;
                while i < v.len() && v[i].is_none() {
                    i += 1;
                }
                let run = i - start;
                let fill = if run <= max_run { last.or(fallback) } else { fallback }?;
                for _ in 0..run {
                    out.push(fill);
                }
                last = Some(fill);
            }
        }
    }
    Some(out)
}

fn fill_label_runs(
    v: &[Option<String>],
    max_run: usize,
    fallback: Option<String>,
) -> Option<Vec<String>> {
    let mut out = Vec::with_capacity(v.len());
    let mut i = 0;
    let mut last: Option<String> = None;
    while i < v.len() {
        match &v[i] {
            Some(x) => {
                out.push(x.clone());
                last = Some(x.clone());
                i += 1;
            }
            None => {
                let start = i;
                while i < v.len() && v[i].is_none() {
                    i += 1;
                }
                let run = i - start;
                let fill = if run <= max_run {
                    last.clone().or(fallback.clone())
                } else {
                    fallback.clone()
                }?;
                for _ in 0..run {
                    out.push(fill.clone());
                }
                last = Some(fill);
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SyntheticSpec};
    use crate::rng::SeedRng;
    use approx::assert_abs_diff_eq;

    fn table_of(columns: Vec<(&str, ColumnKind, Vec<Option<f64>>)>) -> TimeSeriesTable {
        let n = columns[0].2.len();
        let mut cols = vec![Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
        }];
        for (name, kind, vals) in columns {
            cols.push(Column {
                meta: ColumnMeta::new(name, kind),
                values: ColumnValues::Float(vals),
            });
        }
        TimeSeriesTable::new(cols, crate::ingest::Frequency::Hourly).unwrap()
    }

    #[test]
    fn minmax_fits_train_rows_only() {
        let vals: Vec<Option<f64>> =
            vec![Some(2.0), Some(4.0), Some(10.0), Some(150.0), Some(-3.0)];
        let t = table_of(vec![("x", ColumnKind::Continuous, vals)]);
        let params = fit_minmax(&t, 0..3).unwrap();
        let entry = &params.columns["x"];
        assert_eq!((entry.min, entry.max), (2.0, 10.0));
    }

    #[test]
    fn minmax_constant_column_is_degenerate() {
        let t = table_of(vec![("x", ColumnKind::Continuous, vec![Some(5.0); 3])]);
        let params = fit_minmax(&t, 0..3).unwrap();
        assert_eq!((params.columns["x"].min, params.columns["x"].max), (5.0, 5.0));
        let scaled = scale(&[5.0, 5.0], "x", &params, ScaleDirection::Forward).unwrap();
        assert_eq!(scaled, vec![0.0, 0.0]);
    }

    #[test]
    fn scale_endpoints_and_midpoint() {
        let params = ScalingParams {
            columns: [("x".to_string(), MinMaxEntry { min: 2.0, max: 10.0 })].into(),
        };
        let fwd = scale(&[2.0, 10.0, 4.0], "x", &params, ScaleDirection::Forward).unwrap();
        assert_abs_diff_eq!(fwd[0], 0.0);
        assert_abs_diff_eq!(fwd[1], 1.0);
        assert_abs_diff_eq!(fwd[2], 0.25);
    }

    #[test]
    fn scale_round_trips_within_1e12() {
        let params = ScalingParams {
            columns: [("x".to_string(), MinMaxEntry { min: 2.0, max: 10.0 })].into(),
        };
        let original = [3.7, 8.1];
        let fwd = scale(&original, "x", &params, ScaleDirection::Forward).unwrap();
        let back = scale(&fwd, "x", &params, ScaleDirection::Inverse).unwrap();
        for (a, b) in original.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn unfitted_column_is_an_error() {
        let params = ScalingParams::default();
        assert!(matches!(
            scale(&[1.0], "nope", &params, ScaleDirection::Forward),
            Err(FeatureError::UnfittedColumn(_))
        ));
    }

    fn loo_table() -> TimeSeriesTable {
        let n = 5;
        let labels = ["A", "A", "B", "A", "A"];
        let mut cols = vec![Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
        }];
        cols.push(Column {
            meta: ColumnMeta::new("site", ColumnKind::Categorical),
            values: ColumnValues::Label(labels.iter().map(|s| Some(s.to_string())).collect()),
        });
        cols.push(Column {
            meta: ColumnMeta::new("y", ColumnKind::Target),
            values: ColumnValues::Float(
                [1.0, 3.0, 2.0, 10.0, 20.0].iter().map(|&v| Some(v)).collect(),
            ),
        });
        TimeSeriesTable::new(cols, crate::ingest::Frequency::Hourly).unwrap()
    }

    #[test]
    fn loo_training_rows_exclude_themselves() {
        // train rows 0..3: A has targets [1, 3], singleton B has [2]
        let (encoded, map) = loo_encode(&loo_table(), "site", "y", 0..3).unwrap();
        assert_abs_diff_eq!(encoded[0], 3.0); // (4 - 1) / 1
        assert_abs_diff_eq!(encoded[1], 1.0); // (4 - 3) / 1
        // singleton category falls back to its plain mean
        assert_abs_diff_eq!(encoded[2], 2.0);
        assert_abs_diff_eq!(map.global_target_mean, 2.0);
    }

    #[test]
    fn loo_rows_outside_train_use_plain_category_mean() {
        let (encoded, _) = loo_encode(&loo_table(), "site", "y", 0..3).unwrap();
        // rows 3 and 4 are validation rows of category A: (1 + 3) / 2
        assert_abs_diff_eq!(encoded[3], 2.0);
        assert_abs_diff_eq!(encoded[4], 2.0);
    }

    #[test]
    fn loo_unseen_category_gets_global_mean() {
        let mut table = loo_table();
        table
            .replace_column(
                "site",
                ColumnKind::Categorical,
                ColumnValues::Label(
                    ["A", "A", "B", "Z", "A"].iter().map(|s| Some(s.to_string())).collect(),
                ),
            )
            .unwrap();
        let (encoded, _) = loo_encode(&table, "site", "y", 0..3).unwrap();
        assert_abs_diff_eq!(encoded[3], 2.0); // global mean of train targets
    }

    #[test]
    fn loo_matches_brute_force_on_random_data() {
        let mut rng = SeedRng::new(9);
        let n = 200;
        let labels: Vec<Option<String>> =
            (0..n).map(|_| Some(format!("c{}", rng.uniform_int(0, 5)))).collect();
        let targets: Vec<Option<f64>> = (0..n).map(|_| Some(rng.normal())).collect();
        let mut cols = vec![Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
        }];
        cols.push(Column {
            meta: ColumnMeta::new("site", ColumnKind::Categorical),
            values: ColumnValues::Label(labels.clone()),
        });
        cols.push(Column {
            meta: ColumnMeta::new("y", ColumnKind::Target),
            values: ColumnValues::Float(targets.clone()),
        });
        let table = TimeSeriesTable::new(cols, crate::ingest::Frequency::Hourly).unwrap();
        let train = 0..150;
        let (encoded, _) = loo_encode(&table, "site", "y", train.clone()).unwrap();

        // Brute force: mean of the other same-category training targets.
        for i in train.clone() {
            let mine = labels[i].clone().unwrap();
            let others: Vec<f64> = train
                .clone()
                .filter(|&j| j != i && labels[j].as_deref() == Some(mine.as_str()))
                .map(|j| targets[j].unwrap())
                .collect();
            if !others.is_empty() {
                let expect = others.iter().sum::<f64>() / others.len() as f64;
                assert_abs_diff_eq!(encoded[i], expect, epsilon = 1e-12);
            }
        }
    }

    fn calendar_row(ts: i64) -> std::collections::BTreeMap<String, f64> {
        let t = TimeSeriesTable::new(
            vec![
                Column {
                    meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
                    values: ColumnValues::Time(vec![ts]),
                },
                Column {
                    meta: ColumnMeta::new("y", ColumnKind::Target),
                    values: ColumnValues::Float(vec![Some(1.0)]),
                },
            ],
            crate::ingest::Frequency::Hourly,
        )
        .unwrap();
        let out = add_cyclical_calendar(&t).unwrap();
        CALENDAR_COLUMNS
            .iter()
            .map(|&n| (n.to_string(), out.float_column(n).unwrap()[0].unwrap()))
            .collect()
    }

    #[test]
    fn calendar_hour_zero_and_six() {
        // 2015-01-01 00:00 UTC
        let row = calendar_row(1420070400);
        assert_abs_diff_eq!(row["sine_hr"], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row["cos_hr"], 1.0, epsilon = 1e-12);
        // six hours later: quarter period
        let row = calendar_row(1420070400 + 6 * 3600);
        assert_abs_diff_eq!(row["sine_hr"], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row["cos_hr"], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn calendar_winter_friday() {
        // 2016-01-15 12:00 UTC was a Friday in meteorological winter.
        let row = calendar_row(1452859200);
        assert_abs_diff_eq!(row["is_weekend"], 0.0);
        assert_abs_diff_eq!(row["Season_Winter"], 1.0);
        assert_abs_diff_eq!(row["Season_Spring"], 0.0);
        assert_abs_diff_eq!(row["Season_Summer"], 0.0);
    }

    #[test]
    fn calendar_pairs_stay_on_the_unit_circle() {
        let mut rng = SeedRng::new(4);
        for _ in 0..200 {
            let ts = rng.uniform_int(1420070400, 1546300800);
            let row = calendar_row(ts);
            assert_abs_diff_eq!(
                row["sine_hr"].powi(2) + row["cos_hr"].powi(2),
                1.0,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                row["sine_mon"].powi(2) + row["cos_mon"].powi(2),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn calendar_respects_existing_columns() {
        let n = 3;
        let t = table_of(vec![("sine_hr", ColumnKind::Continuous, vec![Some(9.0); n])]);
        let out = add_cyclical_calendar(&t).unwrap();
        // pre-existing column is untouched, the rest are appended
        assert_eq!(out.float_column("sine_hr").unwrap()[0], Some(9.0));
        assert!(out.column("cos_hr").is_some());
    }

    #[test]
    fn stationary_series_passes_through() {
        let mut rng = SeedRng::new(16);
        let y: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let report = stationarity_report(&y).unwrap();
        let (out, order) = stationarize(&y, &report).unwrap();
        assert_eq!(order, 0);
        assert_eq!(out, y);
    }

    #[test]
    fn random_walk_differences_back_to_its_noise() {
        let mut rng = SeedRng::new(6);
        let noise: Vec<f64> = (0..800).map(|_| rng.normal()).collect();
        let mut acc = 0.0;
        let walk: Vec<f64> = noise
            .iter()
            .map(|e| {
                acc += e;
                acc
            })
            .collect();
        let report = stationarity_report(&walk).unwrap();
        let (out, order) = stationarize(&walk, &report).unwrap();
        assert_eq!(order, 1);
        // the first difference of the cumulative sum is exactly the noise
        for (a, b) in out.iter().zip(&noise[1..]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_trend_needs_one_difference() {
        let y: Vec<f64> = (0..200).map(|t| t as f64).collect();
        let report = StationarityReport {
            adf_stat: 0.0,
            adf_pvalue: 0.9,
            lags_used: 0,
            kpss_stat: 1.0,
            kpss_pvalue: 0.01,
            verdict: Verdict::NonStationary,
        };
        let (out, order) = stationarize(&y, &report).unwrap();
        assert_eq!(order, 1);
        assert!(out.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn undifference_round_trips() {
        let mut rng = SeedRng::new(7);
        let y: Vec<f64> = (0..50).map(|_| rng.normal() * 3.0 + 1.0).collect();
        for order in 1..=2u8 {
            let d = difference(&y, order);
            let back = undifference(&d, order, &y[..order as usize]);
            assert_eq!(back.len(), y.len());
            for (a, b) in y.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn correlation_filter_keeps_copies_and_drops_noise() {
        let mut rng = SeedRng::new(8);
        let n = 10_000;
        let target: Vec<Option<f64>> = (0..n).map(|_| Some(rng.normal())).collect();
        let copy = target.clone();
        let neg: Vec<Option<f64>> = target.iter().map(|v| v.map(|x| -x)).collect();
        let noise: Vec<Option<f64>> = (0..n).map(|_| Some(rng.normal())).collect();
        let t = table_of(vec![
            ("copy", ColumnKind::Continuous, copy),
            ("neg", ColumnKind::Continuous, neg),
            ("noise", ColumnKind::Continuous, noise),
            ("y", ColumnKind::Target, target),
        ]);
        let out = correlation_filter(&t, "y", 0.1, 0..n).unwrap();
        assert_eq!(out.dropped, vec!["noise".to_string()]);
        assert!(out.table.column("copy").is_some());
        assert!(out.table.column("neg").is_some());
        // report includes the target row
        assert_eq!(out.report.names.last().unwrap(), "y");
        let k = out.report.names.len();
        assert_eq!(out.report.matrix.len(), k);
    }

    #[test]
    fn zero_variance_target_is_rejected() {
        let t = table_of(vec![
            ("x", ColumnKind::Continuous, vec![Some(1.0), Some(2.0), Some(3.0)]),
            ("y", ColumnKind::Target, vec![Some(5.0); 3]),
        ]);
        assert!(matches!(
            correlation_filter(&t, "y", 0.1, 0..3),
            Err(FeatureError::ZeroVarianceTarget)
        ));
    }

    fn synthetic_table(seed: u64) -> TimeSeriesTable {
        generate_synthetic(&SyntheticSpec {
            n_rows: 600,
            noise_std: 0.1,
            missing_rate: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn replay_reproduces_the_training_design_matrix() {
        let table = synthetic_table(11);
        let opts = PipelineOptions { pca: false, ..Default::default() };
        let prepared = prepare(&table, 0..480, &opts).unwrap();
        let replayed = replay(&table, &prepared.plan).unwrap();
        assert_eq!(prepared.feature_names, replayed.feature_names);
        let d = prepared.features.cols;
        let train_end = prepared.train_rows.end;
        assert_eq!(
            prepared.features.data[..train_end * d],
            replayed.features.data[..train_end * d]
        );
        assert_eq!(prepared.target, replayed.target);
    }

    #[test]
    fn fitted_parameters_ignore_validation_rows() {
        let table = synthetic_table(12);
        let opts = PipelineOptions::default();
        let base = prepare(&table, 0..480, &opts).unwrap();

        // Perturb every float cell in the validation region.
        let mut poisoned = table.clone();
        let names: Vec<String> = poisoned
            .columns()
            .iter()
            .filter(|c| matches!(c.meta.kind, ColumnKind::Continuous | ColumnKind::Target))
            .map(|c| c.meta.name.clone())
            .collect();
        for name in names {
            let kind = poisoned.column(&name).unwrap().meta.kind;
            let mut vals = poisoned.float_column(&name).unwrap().to_vec();
            for v in vals.iter_mut().skip(480) {
                if let Some(x) = v {
                    *x = *x * 7.0 + 100.0;
                }
            }
            poisoned.replace_column(&name, kind, ColumnValues::Float(vals)).unwrap();
        }
        let poisoned_prep = prepare(&poisoned, 0..480, &opts).unwrap();
        // Every fitted parameter must be identical.
        assert_eq!(
            serde_json::to_string(&base.plan).unwrap(),
            serde_json::to_string(&poisoned_prep.plan).unwrap()
        );
    }

    #[test]
    fn pca_path_produces_component_features() {
        let mut rng = SeedRng::new(13);
        let n = 400;
        let base: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let cols: Vec<(&str, ColumnKind, Vec<Option<f64>>)> = vec![
            ("a", ColumnKind::Continuous, base.iter().map(|v| Some(*v + 0.001 * rng.normal())).collect()),
            ("b", ColumnKind::Continuous, base.iter().map(|v| Some(2.0 * *v + 0.001 * rng.normal())).collect()),
            ("c", ColumnKind::Continuous, base.iter().map(|v| Some(-*v + 0.001 * rng.normal())).collect()),
            ("y", ColumnKind::Target, base.iter().map(|v| Some(*v)).collect()),
        ];
        let t = table_of(cols);
        let opts = PipelineOptions {
            pca: true,
            stationarize: false,
            correlation_filter: false,
            impute: false,
            ..Default::default()
        };
        let prepared = prepare(&t, 0..300, &opts).unwrap();
        // Highly collinear features compress to very few components; the
        // target history column rides along in front.
        assert_eq!(prepared.feature_names[0], "y");
        assert!(prepared.feature_names.len() < 12);
        assert!(prepared.feature_names[1].starts_with("pc"));
    }
}
