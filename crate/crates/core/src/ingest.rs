//! Dataset ingestion: CSV loading against a declared schema, hourly table
//! merging, gap imputation, sparse-column removal, and a seeded synthetic
//! generator used as a test and demo fixture.
//!
//! Missing values are an explicit marker (`None`), never a sentinel float:
//! real zeros are meaningful in power data. All operations return new
//! tables; nothing mutates in place.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeedRng;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("duplicate timestamp at row {0}")]
    DuplicateTimestamp(usize),
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("unparseable timestamp: {0:?}")]
    BadTimestamp(String),
    #[error("tables have no overlapping timestamps")]
    NoOverlap,
    #[error("frequency mismatch: both tables must be hourly")]
    FrequencyMismatch,
    #[error("column {0} has no observed values to impute from")]
    AllMissingColumn(String),
    #[error("all feature columns exceeded the sparsity threshold")]
    AllColumnsDropped,
    #[error("invalid table: {0}")]
    Invalid(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Target,
    Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Fraction of missing cells over raw rows, before any imputation.
    pub missing_fraction: f64,
    pub unit: String,
}

impl ColumnMeta {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnMeta { name: name.to_string(), kind, missing_fraction: 0.0, unit: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Float(Vec<Option<f64>>),
    Label(Vec<Option<String>>),
    Time(Vec<i64>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Float(v) => v.len(),
            ColumnValues::Label(v) => v.len(),
            ColumnValues::Time(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn missing_fraction(&self) -> f64 {
        let n = self.len().max(1) as f64;
        match self {
            ColumnValues::Float(v) => v.iter().filter(|c| c.is_none()).count() as f64 / n,
            ColumnValues::Label(v) => v.iter().filter(|c| c.is_none()).count() as f64 / n,
            ColumnValues::Time(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub meta: ColumnMeta,
    pub values: ColumnValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Hourly,
    Irregular,
}

/// Timestamp-indexed columnar dataset, the substrate of all preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    columns: Vec<Column>,
    n_rows: usize,
    frequency: Frequency,
}

impl TimeSeriesTable {
    pub fn new(columns: Vec<Column>, frequency: Frequency) -> Result<Self, IngestError> {
        let ts_count = columns.iter().filter(|c| c.meta.kind == ColumnKind::Timestamp).count();
        if ts_count != 1 {
            return Err(IngestError::Invalid(format!(
                "expected exactly one timestamp column, found {ts_count}"
            )));
        }
        let n_rows = columns[0].values.len();
        for c in &columns {
            if c.values.len() != n_rows {
                return Err(IngestError::Invalid(format!(
                    "column {} has {} rows, expected {n_rows}",
                    c.meta.name,
                    c.values.len()
                )));
            }
            let storage_ok = matches!(
                (&c.meta.kind, &c.values),
                (ColumnKind::Continuous, ColumnValues::Float(_))
                    | (ColumnKind::Target, ColumnValues::Float(_))
                    | (ColumnKind::Categorical, ColumnValues::Label(_))
                    | (ColumnKind::Timestamp, ColumnValues::Time(_))
            );
            if !storage_ok {
                return Err(IngestError::Invalid(format!(
                    "column {} storage does not match its kind",
                    c.meta.name
                )));
            }
        }
        let table = TimeSeriesTable { columns, n_rows, frequency };
        let ts = table.timestamps();
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(IngestError::Invalid("timestamps must be nondecreasing".into()));
        }
        Ok(table)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.meta.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.meta.name.clone()).collect()
    }

    pub fn timestamps(&self) -> &[i64] {
        self.columns
            .iter()
            .find_map(|c| match &c.values {
                ColumnValues::Time(v) if c.meta.kind == ColumnKind::Timestamp => Some(&v[..]),
                _ => None,
            })
            .expect("validated timestamp column")
    }

    pub fn float_column(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.column(name)?.values {
            ColumnValues::Float(ref v) => Some(v),
            _ => None,
        }
    }

    /// Fully observed float column; errors if any cell is still missing.
    pub fn dense_float_column(&self, name: &str) -> Result<Vec<f64>, IngestError> {
        let col = self
            .float_column(name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
        col.iter()
            .map(|v| v.ok_or_else(|| IngestError::AllMissingColumn(name.to_string())))
            .collect()
    }

    pub fn target_columns(&self) -> Vec<&Column> {
        self.columns.iter().filter(|c| c.meta.kind == ColumnKind::Target).collect()
    }

    /// Continuous feature columns, excluding targets and the timestamp.
    pub fn feature_columns(&self) -> Vec<&Column> {
        self.columns.iter().filter(|c| c.meta.kind == ColumnKind::Continuous).collect()
    }

    pub fn categorical_columns(&self) -> Vec<&Column> {
        self.columns.iter().filter(|c| c.meta.kind == ColumnKind::Categorical).collect()
    }

    pub fn push_column(&mut self, meta: ColumnMeta, values: ColumnValues) -> Result<(), IngestError> {
        if values.len() != self.n_rows {
            return Err(IngestError::Invalid(format!(
                "column {} has {} rows, expected {}",
                meta.name,
                values.len(),
                self.n_rows
            )));
        }
        if self.column(&meta.name).is_some() {
            return Err(IngestError::Invalid(format!("duplicate column name {}", meta.name)));
        }
        self.columns.push(Column { meta, values });
        Ok(())
    }

    /// Replaces the values (and storage kind) of an existing column.
    pub fn replace_column(
        &mut self,
        name: &str,
        kind: ColumnKind,
        values: ColumnValues,
    ) -> Result<(), IngestError> {
        if values.len() != self.n_rows {
            return Err(IngestError::Invalid("length mismatch in replace_column".into()));
        }
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.meta.name == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
        col.meta.kind = kind;
        col.values = values;
        Ok(())
    }

    pub fn rename_column(&mut self, from: &str, to: &str) -> Result<(), IngestError> {
        if from == to {
            return Ok(());
        }
        if self.column(to).is_some() {
            return Err(IngestError::Invalid(format!("rename target {to} already exists")));
        }
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.meta.name == from)
            .ok_or_else(|| IngestError::MissingColumn(from.to_string()))?;
        col.meta.name = to.to_string();
        Ok(())
    }

    pub fn without_columns(&self, names: &[String]) -> TimeSeriesTable {
        let drop: BTreeSet<&str> = names.iter().map(|s| s.as_str()).collect();
        let columns =
            self.columns.iter().filter(|c| !drop.contains(c.meta.name.as_str())).cloned().collect();
        TimeSeriesTable { columns, n_rows: self.n_rows, frequency: self.frequency }
    }

    /// Keeps only rows in `range`, preserving column order.
    pub fn slice_rows(&self, range: Range<usize>) -> TimeSeriesTable {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let values = match &c.values {
                    ColumnValues::Float(v) => ColumnValues::Float(v[range.clone()].to_vec()),
                    ColumnValues::Label(v) => ColumnValues::Label(v[range.clone()].to_vec()),
                    ColumnValues::Time(v) => ColumnValues::Time(v[range.clone()].to_vec()),
                };
                Column { meta: c.meta.clone(), values }
            })
            .collect();
        TimeSeriesTable { columns, n_rows: range.len(), frequency: self.frequency }
    }
}

const TIMESTAMP_FORMATS: [&str; 6] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y%m%d %H:%M:%S",
    "%Y%m%d %H:%M",
    "%m/%d/%Y %H:%M",
];

pub fn parse_timestamp(raw: &str) -> Result<i64, IngestError> {
    let s = raw.trim();
    // Offset-aware forms first (the hourly energy data carries "+01:00").
    if let Ok(dt) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%:z") {
        return Ok(dt.timestamp());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y%m%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    Err(IngestError::BadTimestamp(raw.to_string()))
}

fn is_location_column(meta: &ColumnMeta) -> bool {
    let lower = meta.name.to_lowercase();
    meta.kind == ColumnKind::Categorical && (lower.contains("city") || lower.contains("location"))
}

/// Loads a CSV file (RFC 4180, header row required) against a declared
/// schema. Every schema column must be present in the header; extra file
/// columns are ignored. Unparseable numeric cells become the missing
/// marker. Rows are sorted by timestamp (then by location label when a
/// city/location column is declared, the layout of per-site panel data);
/// duplicate keys are an error rather than silently aggregated.
pub fn load_csv_table(
    path: &Path,
    schema: &[ColumnMeta],
    frequency: Frequency,
) -> Result<TimeSeriesTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut index_of = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        index_of.insert(h.to_string(), i);
    }
    for meta in schema {
        if !index_of.contains_key(&meta.name) {
            return Err(IngestError::MissingColumn(meta.name.clone()));
        }
    }

    let ts_meta = schema
        .iter()
        .find(|m| m.kind == ColumnKind::Timestamp)
        .ok_or_else(|| IngestError::Invalid("schema must declare a timestamp column".into()))?;
    let location_meta = schema.iter().find(|m| is_location_column(m));

    let mut raw_rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        raw_rows.push(record?);
    }
    if raw_rows.is_empty() {
        return Err(IngestError::EmptyFile(path.display().to_string()));
    }

    let ts_idx = index_of[&ts_meta.name];
    let mut keyed: Vec<(i64, String, csv::StringRecord)> = Vec::with_capacity(raw_rows.len());
    for rec in raw_rows {
        let ts = parse_timestamp(rec.get(ts_idx).unwrap_or(""))?;
        let loc = location_meta
            .and_then(|m| rec.get(index_of[&m.name]))
            .unwrap_or("")
            .to_string();
        keyed.push((ts, loc, rec));
    }
    keyed.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    for (row, pair) in keyed.windows(2).enumerate() {
        if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
            return Err(IngestError::DuplicateTimestamp(row + 1));
        }
    }

    let n = keyed.len();
    let mut columns = Vec::with_capacity(schema.len());
    for meta in schema {
        let idx = index_of[&meta.name];
        let values = match meta.kind {
            ColumnKind::Timestamp => {
                ColumnValues::Time(keyed.iter().map(|(ts, _, _)| *ts).collect())
            }
            ColumnKind::Continuous | ColumnKind::Target => ColumnValues::Float(
                keyed
                    .iter()
                    .map(|(_, _, rec)| {
                        rec.get(idx).and_then(|c| {
                            let t = c.trim();
                            if t.is_empty() {
                                None
                            } else {
                                t.parse::<f64>().ok().filter(|v| v.is_finite())
                            }
                        })
                    })
                    .collect(),
            ),
            ColumnKind::Categorical => ColumnValues::Label(
                keyed
                    .iter()
                    .map(|(_, _, rec)| {
                        rec.get(idx).and_then(|c| {
                            let t = c.trim();
                            if t.is_empty() {
                                None
                            } else {
                                Some(t.to_string())
                            }
                        })
                    })
                    .collect(),
            ),
        };
        let mut meta = meta.clone();
        meta.missing_fraction = values.missing_fraction();
        debug_assert_eq!(values.len(), n);
        columns.push(Column { meta, values });
    }

    TimeSeriesTable::new(columns, frequency)
}

/// Inner join of two hourly tables on timestamp. When the weather table
/// carries a city/location column, its continuous columns are pivoted to
/// one city-suffixed column per (column, city) pair, e.g. `temp_Barcelona`.
pub fn merge_hourly(
    weather: &TimeSeriesTable,
    generation: &TimeSeriesTable,
) -> Result<TimeSeriesTable, IngestError> {
    if weather.frequency() != Frequency::Hourly || generation.frequency() != Frequency::Hourly {
        return Err(IngestError::FrequencyMismatch);
    }

    let location_col = weather.columns().iter().find(|c| is_location_column(&c.meta)).cloned();
    let weather_wide = match &location_col {
        Some(col) => pivot_by_location(weather, col)?,
        None => weather.clone(),
    };

    let gen_ts = generation.timestamps();
    let wx_ts = weather_wide.timestamps();
    let wx_index: BTreeMap<i64, usize> = wx_ts.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut joint: Vec<(usize, usize)> = Vec::new();
    for (gi, &t) in gen_ts.iter().enumerate() {
        if let Some(&wi) = wx_index.get(&t) {
            joint.push((gi, wi));
        }
    }
    if joint.is_empty() {
        return Err(IngestError::NoOverlap);
    }

    let mut columns: Vec<Column> = Vec::new();
    for c in generation.columns() {
        let values = take_rows(&c.values, joint.iter().map(|&(gi, _)| gi));
        columns.push(finish_column(c.meta.clone(), values));
    }
    for c in weather_wide.columns() {
        if c.meta.kind == ColumnKind::Timestamp {
            continue;
        }
        if columns.iter().any(|existing| existing.meta.name == c.meta.name) {
            return Err(IngestError::Invalid(format!(
                "column name collision on merge: {}",
                c.meta.name
            )));
        }
        let values = take_rows(&c.values, joint.iter().map(|&(_, wi)| wi));
        columns.push(finish_column(c.meta.clone(), values));
    }

    TimeSeriesTable::new(columns, Frequency::Hourly)
}

fn take_rows(values: &ColumnValues, idx: impl Iterator<Item = usize>) -> ColumnValues {
    match values {
        ColumnValues::Float(v) => ColumnValues::Float(idx.map(|i| v[i]).collect()),
        ColumnValues::Label(v) => ColumnValues::Label(idx.map(|i| v[i].clone()).collect()),
        ColumnValues::Time(v) => ColumnValues::Time(idx.map(|i| v[i]).collect()),
    }
}

fn finish_column(mut meta: ColumnMeta, values: ColumnValues) -> Column {
    meta.missing_fraction = values.missing_fraction();
    Column { meta, values }
}

fn pivot_by_location(
    table: &TimeSeriesTable,
    location: &Column,
) -> Result<TimeSeriesTable, IngestError> {
    let labels = match &location.values {
        ColumnValues::Label(v) => v,
        _ => unreachable!("location column is categorical"),
    };
    let ts = table.timestamps();

    let mut cities: Vec<String> = labels.iter().flatten().cloned().collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    cities.sort();
    if cities.is_empty() {
        return Err(IngestError::Invalid("location column has no labels".into()));
    }

    let unique_ts: Vec<i64> = {
        let mut v: Vec<i64> = ts.to_vec();
        v.dedup();
        v
    };
    let ts_pos: BTreeMap<i64, usize> = unique_ts.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let city_pos: BTreeMap<&str, usize> =
        cities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut columns = vec![Column {
        meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
        values: ColumnValues::Time(unique_ts.clone()),
    }];

    for c in table.columns() {
        let src = match (&c.meta.kind, &c.values) {
            (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v)) => v,
            _ => continue,
        };
        let mut per_city: Vec<Vec<Option<f64>>> =
            vec![vec![None; unique_ts.len()]; cities.len()];
        for (row, value) in src.iter().enumerate() {
            if let Some(city) = labels[row].as_deref() {
                let ci = city_pos[city];
                let ti = ts_pos[&ts[row]];
                per_city[ci][ti] = *value;
            }
        }
        for (ci, city) in cities.iter().enumerate() {
            let name = format!("{}_{}", c.meta.name, city);
            let mut meta = ColumnMeta::new(&name, c.meta.kind);
            meta.unit = c.meta.unit.clone();
            let values = std::mem::take(&mut per_city[ci]);
            columns.push(finish_column(meta, ColumnValues::Float(values)));
        }
    }

    TimeSeriesTable::new(columns, table.frequency())
}

/// Per-column statistics recorded while imputing, for the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub means: BTreeMap<String, f64>,
    pub modes: BTreeMap<String, String>,
}

/// Fills missing cells. Runs of at most three consecutive missing values
/// are forward-filled from the last observed value; longer runs, and
/// leading gaps with no prior value, take the column's mean (continuous)
/// or mode (categorical) computed over `train_rows` only so the same
/// record replays onto validation data without leakage.
pub fn impute_gaps(
    table: &TimeSeriesTable,
    train_rows: Range<usize>,
) -> Result<(TimeSeriesTable, ImputationRecord), IngestError> {
    const MAX_FFILL_RUN: usize = 3;
    let mut record = ImputationRecord::default();
    let mut columns = Vec::with_capacity(table.columns().len());

    for c in table.columns() {
        let filled = match (&c.meta.kind, &c.values) {
            (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v)) => {
                let has_missing = v.iter().any(|x| x.is_none());
                let train_mean = {
                    let obs: Vec<f64> =
                        v[train_rows.clone()].iter().flatten().copied().collect();
                    if obs.is_empty() {
                        None
                    } else {
                        Some(obs.iter().sum::<f64>() / obs.len() as f64)
                    }
                };
                if has_missing {
                    if let Some(m) = train_mean {
                        record.means.insert(c.meta.name.clone(), m);
                    }
                }
                let out = fill_runs(v, MAX_FFILL_RUN, train_mean)
                    .ok_or_else(|| IngestError::AllMissingColumn(c.meta.name.clone()))?;
                ColumnValues::Float(out.into_iter().map(Some).collect())
            }
            (ColumnKind::Categorical, ColumnValues::Label(v)) => {
                let has_missing = v.iter().any(|x| x.is_none());
                let train_mode = mode_label(&v[train_rows.clone()]);
                if has_missing {
                    if let Some(m) = &train_mode {
                        record.modes.insert(c.meta.name.clone(), m.clone());
                    }
                }
                let out = fill_label_runs(v, MAX_FFILL_RUN, train_mode)
                    .ok_or_else(|| IngestError::AllMissingColumn(c.meta.name.clone()))?;
                ColumnValues::Label(out.into_iter().map(Some).collect())
            }
            _ => c.values.clone(),
        };
        columns.push(Column { meta: c.meta.clone(), values: filled });
    }

    let out = TimeSeriesTable::new(columns, table.frequency())?;
    Ok((out, record))
}

fn fill_runs(v: &[Option<f64>], max_run: usize, fallback: Option<f64>) -> Option<Vec<f64>> {
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
                let fill = if run <= max_run { last.or(fallback) } else { fallback };
                let fill = match fill.or(fallback) {
                    Some(f) => f,
                    None => return None,
                };
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
                let fill = if run <= max_run { last.clone().or(fallback.clone()) } else { fallback.clone() };
                let fill = match fill.or(fallback.clone()) {
                    Some(f) => f,
                    None => return None,
                };
                for _ in 0..run {
                    out.push(fill.clone());
                }
                last = Some(fill);
            }
        }
    }
    Some(out)
}

/// Most frequent label; ties resolve to the lexicographically smallest so
/// replays are deterministic.
fn mode_label(v: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in v.iter().flatten() {
        *counts.entry(label.as_str()).or_insert(0) += 1;
    }
    counts.into_iter().max_by_key(|&(_, c)| c).map(|(s, _)| s.to_string())
}

/// Removes feature columns whose raw missing fraction strictly exceeds the
/// threshold. Targets and the timestamp are never dropped.
pub fn drop_sparse_columns(
    table: &TimeSeriesTable,
    threshold: f64,
) -> Result<(TimeSeriesTable, Vec<String>), IngestError> {
    let mut dropped = Vec::new();
    for c in table.columns() {
        let droppable =
            matches!(c.meta.kind, ColumnKind::Continuous | ColumnKind::Categorical);
        if droppable && c.meta.missing_fraction > threshold {
            dropped.push(c.meta.name.clone());
        }
    }
    let feature_count = table
        .columns()
        .iter()
        .filter(|c| matches!(c.meta.kind, ColumnKind::Continuous | ColumnKind::Categorical))
        .count();
    if feature_count > 0 && dropped.len() == feature_count {
        return Err(IngestError::AllColumnsDropped);
    }
    Ok((table.without_columns(&dropped), dropped))
}

/// Seeded synthetic series: trend plus seasonal sinusoids plus Gaussian
/// noise, with missing cells injected at a target rate in runs capped at
/// `gap_max_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    /// (period in steps, amplitude) per seasonal term.
    pub seasonal_periods: Vec<(f64, f64)>,
    pub trend_slope: f64,
    pub noise_std: f64,
    pub missing_rate: f64,
    pub gap_max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_rows: 5000,
            seasonal_periods: vec![(24.0, 1.0)],
            trend_slope: 0.0001,
            noise_std: 0.05,
            missing_rate: 0.0,
            gap_max_len: 3,
            seed: 0,
        }
    }
}

/// Hourly timestamps start here (2015-01-01T00:00:00Z), matching the
/// earliest year of the real data.
pub const SYNTHETIC_EPOCH: i64 = 1_420_070_400;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeriesTable, IngestError> {
    if spec.noise_std < 0.0 {
        return Err(IngestError::InvalidSpec("noise_std must be nonnegative".into()));
    }
    if !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(IngestError::InvalidSpec("missing_rate must be in [0, 1)".into()));
    }
    if spec.missing_rate > 0.0 && spec.gap_max_len == 0 {
        return Err(IngestError::InvalidSpec("gap_max_len must be positive when injecting gaps".into()));
    }
    if spec.n_rows == 0 {
        return Err(IngestError::InvalidSpec("n_rows must be positive".into()));
    }
    for &(period, _) in &spec.seasonal_periods {
        if period <= 0.0 {
            return Err(IngestError::InvalidSpec("seasonal period must be positive".into()));
        }
    }

    let mut rng = SeedRng::new(spec.seed);
    let mut values: Vec<Option<f64>> = Vec::with_capacity(spec.n_rows);
    for t in 0..spec.n_rows {
        let tf = t as f64;
        let mut v = spec.trend_slope * tf;
        for &(period, amplitude) in &spec.seasonal_periods {
            v += amplitude * (2.0 * std::f64::consts::PI * tf / period).sin();
        }
        if spec.noise_std > 0.0 {
            v += spec.noise_std * rng.normal();
        }
        values.push(Some(v));
    }

    if spec.missing_rate > 0.0 {
        let mut run = 0usize;
        for cell in values.iter_mut() {
            let draw = rng.uniform();
            if draw < spec.missing_rate && run < spec.gap_max_len {
                *cell = None;
                run += 1;
            } else {
                run = 0;
            }
        }
    }

    let timestamps: Vec<i64> =
        (0..spec.n_rows).map(|t| SYNTHETIC_EPOCH + 3600 * t as i64).collect();

    let columns = vec![
        Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time(timestamps),
        },
        finish_column(ColumnMeta::new("target", ColumnKind::Target), ColumnValues::Float(values)),
    ];
    TimeSeriesTable::new(columns, Frequency::Hourly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema_ts_target() -> Vec<ColumnMeta> {
        vec![
            ColumnMeta::new("time", ColumnKind::Timestamp),
            ColumnMeta::new("power", ColumnKind::Target),
        ]
    }

    #[test]
    fn clean_csv_has_zero_missing() {
        let f = write_csv("time,power\n2015-01-01 00:00:00,1.0\n2015-01-01 01:00:00,2.0\n2015-01-01 02:00:00,3.0\n");
        let t = load_csv_table(f.path(), &schema_ts_target(), Frequency::Hourly).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_abs_diff_eq!(t.column("power").unwrap().meta.missing_fraction, 0.0);
    }

    #[test]
    fn blank_cells_count_toward_missing_fraction() {
        let mut body = String::from("time,temp\n");
        for h in 0..10 {
            let cell = if h == 3 || h == 7 { "" } else { "5.0" };
            body.push_str(&format!("2015-01-01 {h:02}:00:00,{cell}\n"));
        }
        let schema = vec![
            ColumnMeta::new("time", ColumnKind::Timestamp),
            ColumnMeta::new("temp", ColumnKind::Continuous),
        ];
        let f = write_csv(&body);
        let t = load_csv_table(f.path(), &schema, Frequency::Hourly).unwrap();
        assert_abs_diff_eq!(t.column("temp").unwrap().meta.missing_fraction, 0.2);
    }

    #[test]
    fn missing_schema_column_is_reported() {
        let f = write_csv("time,power\n2015-01-01 00:00:00,1\n");
        let mut schema = schema_ts_target();
        schema.push(ColumnMeta::new("wind", ColumnKind::Continuous));
        match load_csv_table(f.path(), &schema, Frequency::Hourly) {
            Err(IngestError::MissingColumn(name)) => assert_eq!(name, "wind"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamps_are_rejected() {
        let f = write_csv("time,power\n2015-01-01 00:00:00,1\n2015-01-01 00:00:00,2\n");
        assert!(matches!(
            load_csv_table(f.path(), &schema_ts_target(), Frequency::Hourly),
            Err(IngestError::DuplicateTimestamp(_))
        ));
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write_csv("time,power\n");
        assert!(matches!(
            load_csv_table(f.path(), &schema_ts_target(), Frequency::Hourly),
            Err(IngestError::EmptyFile(_))
        ));
    }

    #[test]
    fn unparseable_numeric_becomes_missing() {
        let f = write_csv("time,power\n2015-01-01 00:00:00,oops\n2015-01-01 01:00:00,2\n");
        let t = load_csv_table(f.path(), &schema_ts_target(), Frequency::Hourly).unwrap();
        let col = t.float_column("power").unwrap();
        assert_eq!(col[0], None);
        assert_eq!(col[1], Some(2.0));
    }

    #[test]
    fn offset_timestamps_parse() {
        assert_eq!(parse_timestamp("2015-01-01 00:00:00+01:00").unwrap(), 1420066800);
        assert_eq!(parse_timestamp("2015-01-01 00:00:00").unwrap(), 1420070400);
        assert!(parse_timestamp("not a time").is_err());
    }

    fn table_with_ts(ts: &[i64], name: &str, vals: &[f64]) -> TimeSeriesTable {
        TimeSeriesTable::new(
            vec![
                Column {
                    meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
                    values: ColumnValues::Time(ts.to_vec()),
                },
                Column {
                    meta: ColumnMeta::new(name, ColumnKind::Continuous),
                    values: ColumnValues::Float(vals.iter().map(|&v| Some(v)).collect()),
                },
            ],
            Frequency::Hourly,
        )
        .unwrap()
    }

    #[test]
    fn merge_identical_timestamps_keeps_all_rows() {
        let ts: Vec<i64> = (0..5).map(|i| 3600 * i).collect();
        let a = table_with_ts(&ts, "temp", &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = table_with_ts(&ts, "load", &[9.0, 8.0, 7.0, 6.0, 5.0]);
        let m = merge_hourly(&a, &b).unwrap();
        assert_eq!(m.n_rows(), 5);
        assert!(m.column("temp").is_some());
        assert!(m.column("load").is_some());
    }

    #[test]
    fn merge_keeps_only_the_intersection() {
        let a = table_with_ts(&[0, 3600, 7200, 10800, 14400], "temp", &[1.0; 5]);
        let b = table_with_ts(&[7200, 10800, 14400, 18000, 21600], "load", &[2.0; 5]);
        let m = merge_hourly(&a, &b).unwrap();
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.timestamps(), &[7200, 10800, 14400]);
    }

    #[test]
    fn merge_without_overlap_fails() {
        let a = table_with_ts(&[0, 3600], "temp", &[1.0, 2.0]);
        let b = table_with_ts(&[7200, 10800], "load", &[3.0, 4.0]);
        assert!(matches!(merge_hourly(&a, &b), Err(IngestError::NoOverlap)));
    }

    #[test]
    fn merge_pivots_city_columns() {
        let weather = TimeSeriesTable::new(
            vec![
                Column {
                    meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
                    values: ColumnValues::Time(vec![0, 0, 3600, 3600]),
                },
                Column {
                    meta: ColumnMeta::new("city_name", ColumnKind::Categorical),
                    values: ColumnValues::Label(
                        ["Barcelona", "Madrid", "Barcelona", "Madrid"]
                            .iter()
                            .map(|s| Some(s.to_string()))
                            .collect(),
                    ),
                },
                Column {
                    meta: ColumnMeta::new("temp", ColumnKind::Continuous),
                    values: ColumnValues::Float(vec![Some(10.0), Some(20.0), Some(11.0), Some(21.0)]),
                },
            ],
            Frequency::Hourly,
        )
        .unwrap();
        let gen = table_with_ts(&[0, 3600], "load", &[5.0, 6.0]);
        let m = merge_hourly(&weather, &gen).unwrap();
        assert_eq!(m.n_rows(), 2);
        let bcn = m.float_column("temp_Barcelona").unwrap();
        let mad = m.float_column("temp_Madrid").unwrap();
        assert_eq!(bcn, &[Some(10.0), Some(11.0)]);
        assert_eq!(mad, &[Some(20.0), Some(21.0)]);
    }

    fn float_table(vals: Vec<Option<f64>>) -> TimeSeriesTable {
        let n = vals.len();
        TimeSeriesTable::new(
            vec![
                Column {
                    meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
                    values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
                },
                finish_column(ColumnMeta::new("x", ColumnKind::Continuous), ColumnValues::Float(vals)),
            ],
            Frequency::Hourly,
        )
        .unwrap()
    }

    #[test]
    fn short_runs_forward_fill() {
        let t = float_table(vec![Some(5.0), None, None, None, Some(9.0)]);
        let (out, _) = impute_gaps(&t, 0..5).unwrap();
        assert_eq!(out.dense_float_column("x").unwrap(), vec![5.0, 5.0, 5.0, 5.0, 9.0]);
    }

    #[test]
    fn long_runs_take_the_training_mean() {
        // mean over observed train values (5 and 9) is 7
        let t = float_table(vec![Some(5.0), None, None, None, None, Some(9.0)]);
        let (out, rec) = impute_gaps(&t, 0..6).unwrap();
        assert_eq!(out.dense_float_column("x").unwrap(), vec![5.0, 7.0, 7.0, 7.0, 7.0, 9.0]);
        assert_abs_diff_eq!(rec.means["x"], 7.0);
    }

    #[test]
    fn leading_gap_uses_the_mean_branch() {
        let t = float_table(vec![None, Some(4.0), Some(8.0)]);
        let (out, _) = impute_gaps(&t, 0..3).unwrap();
        assert_eq!(out.dense_float_column("x").unwrap(), vec![6.0, 4.0, 8.0]);
    }

    #[test]
    fn categorical_short_run_forward_fills() {
        let vals = vec![
            Some("A".to_string()),
            None,
            Some("A".to_string()),
            Some("B".to_string()),
        ];
        let n = vals.len();
        let t = TimeSeriesTable::new(
            vec![
                Column {
                    meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
                    values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
                },
                finish_column(ColumnMeta::new("site", ColumnKind::Categorical), ColumnValues::Label(vals)),
            ],
            Frequency::Hourly,
        )
        .unwrap();
        let (out, _) = impute_gaps(&t, 0..n).unwrap();
        match &out.column("site").unwrap().values {
            ColumnValues::Label(v) => {
                let got: Vec<&str> = v.iter().map(|x| x.as_deref().unwrap()).collect();
                assert_eq!(got, vec!["A", "A", "A", "B"]);
            }
            _ => panic!("wrong storage"),
        }
    }

    #[test]
    fn fully_missing_column_cannot_be_imputed() {
        let t = float_table(vec![None, None, None]);
        assert!(matches!(impute_gaps(&t, 0..3), Err(IngestError::AllMissingColumn(_))));
    }

    #[test]
    fn impute_leaves_no_missing_cells() {
        let spec = SyntheticSpec { missing_rate: 0.15, n_rows: 2000, seed: 5, ..Default::default() };
        let t = generate_synthetic(&spec).unwrap();
        let (out, _) = impute_gaps(&t, 0..1500).unwrap();
        for c in out.columns() {
            if let ColumnValues::Float(v) = &c.values {
                assert!(v.iter().all(|x| x.is_some()));
            }
        }
    }

    fn sparse_table(fracs: &[f64]) -> TimeSeriesTable {
        let n = 100usize;
        let mut columns = vec![Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
        }];
        for (j, &f) in fracs.iter().enumerate() {
            let missing = (f * n as f64).round() as usize;
            let vals: Vec<Option<f64>> =
                (0..n).map(|i| if i < missing { None } else { Some(1.0) }).collect();
            columns.push(finish_column(
                ColumnMeta::new(&format!("c{j}"), ColumnKind::Continuous),
                ColumnValues::Float(vals),
            ));
        }
        TimeSeriesTable::new(columns, Frequency::Hourly).unwrap()
    }

    #[test]
    fn drop_is_strictly_greater_than_threshold() {
        let t = sparse_table(&[0.16, 0.15]);
        let (out, dropped) = drop_sparse_columns(&t, 0.15).unwrap();
        assert_eq!(dropped, vec!["c0".to_string()]);
        assert!(out.column("c1").is_some());
    }

    #[test]
    fn drop_keeps_only_dense_columns() {
        let t = sparse_table(&[0.0, 0.2, 0.5]);
        let (out, dropped) = drop_sparse_columns(&t, 0.15).unwrap();
        assert_eq!(dropped.len(), 2);
        assert_eq!(out.feature_columns().len(), 1);
    }

    #[test]
    fn drop_is_idempotent() {
        let t = sparse_table(&[0.0, 0.2, 0.5]);
        let (once, _) = drop_sparse_columns(&t, 0.15).unwrap();
        let (twice, dropped) = drop_sparse_columns(&once, 0.15).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(once, twice);
    }

    #[test]
    fn dropping_everything_is_an_error() {
        let t = sparse_table(&[0.5, 0.9]);
        assert!(matches!(drop_sparse_columns(&t, 0.15), Err(IngestError::AllColumnsDropped)));
    }

    #[test]
    fn synthetic_noiseless_is_exact() {
        let spec = SyntheticSpec {
            n_rows: 48,
            seasonal_periods: vec![(24.0, 2.0)],
            trend_slope: 0.5,
            noise_std: 0.0,
            missing_rate: 0.0,
            gap_max_len: 3,
            seed: 1,
        };
        let t = generate_synthetic(&spec).unwrap();
        let y = t.dense_float_column("target").unwrap();
        for (i, v) in y.iter().enumerate() {
            let expect =
                0.5 * i as f64 + 2.0 * (2.0 * std::f64::consts::PI * i as f64 / 24.0).sin();
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec { noise_std: 0.3, missing_rate: 0.05, seed: 99, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_missing_rate_is_respected() {
        let spec = SyntheticSpec {
            n_rows: 10_000,
            missing_rate: 0.1,
            gap_max_len: 3,
            seed: 7,
            ..Default::default()
        };
        let t = generate_synthetic(&spec).unwrap();
        let frac = t.column("target").unwrap().meta.missing_fraction;
        assert!((frac - 0.1).abs() < 0.01, "observed {frac}");
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let bad = SyntheticSpec { missing_rate: 1.0, ..Default::default() };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec { noise_std: -1.0, ..Default::default() };
        assert!(generate_synthetic(&bad).is_err());
    }
}
