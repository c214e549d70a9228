//! Run orchestration: configuration, dataset loading with schema
//! inference, descriptive and stationarity reports, the model sweep, and
//! manifest persistence. A run is a pure function of its configuration;
//! the manifest is written before any model trains and finalized at the
//! end.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    emit_report, friedman_table, ratio_sweep, EvalError, PlanEntry, RatioSweepReport,
};
use crate::features::{correlation_filter, fit_minmax, CorrelationReport, FeatureError, PipelineOptions};
use crate::hpo::{grid_refine, random_search, trial_splits, write_trial_log, HpoError, SearchSpace, TrialResult};
use crate::ingest::{
    drop_sparse_columns, generate_synthetic, impute_gaps, load_csv_table, merge_hourly,
    ColumnKind, ColumnMeta, ColumnValues, Frequency, IngestError, SyntheticSpec, TimeSeriesTable,
};
use crate::models::{ModelError, ModelFamily, ModelSpec};
use crate::stats::{
    mutual_information, pca_fit, stationarity_report, summary_stats, FriedmanResult, PcaModel,
    StatsError, SummaryStats, Verdict,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config field {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("dataset file missing: {0}")]
    DatasetMissing(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Dataset1,
    Dataset2,
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "dataset1" => Ok(DatasetKind::Dataset1),
            "dataset2" => Ok(DatasetKind::Dataset2),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(format!("unknown dataset: {other}")),
        }
    }
}

fn default_dataset() -> DatasetKind {
    DatasetKind::Synthetic
}

fn default_families() -> Vec<String> {
    let mut v: Vec<String> = ModelFamily::NEURAL.iter().map(|f| f.name().to_string()).collect();
    v.extend(ModelFamily::NEURAL.iter().map(|f| format!("reg_{}", f.name())));
    v.push("arima".to_string());
    v
}

fn default_ratios() -> Vec<f64> {
    vec![0.2, 0.3, 0.4, 0.5]
}

fn default_k() -> usize {
    5
}

fn default_jobs() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Full description of a run. The seed is mandatory; there is no
/// wall-clock default anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetKind,
    #[serde(default)]
    pub weather_csv: Option<PathBuf>,
    #[serde(default)]
    pub generation_csv: Option<PathBuf>,
    #[serde(default)]
    pub panel_csv: Option<PathBuf>,
    /// Overrides the inferred target column.
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub options: PipelineOptions,
    /// Family labels; a `reg_` prefix selects the regularized variant.
    #[serde(default = "default_families")]
    pub families: Vec<String>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub hpo_budget: Option<usize>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Optional training-budget overrides for the final sweep.
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
}

impl RunConfig {
    pub fn synthetic_default(seed: u64) -> RunConfig {
        RunConfig {
            dataset: DatasetKind::Synthetic,
            weather_csv: None,
            generation_csv: None,
            panel_csv: None,
            target_column: None,
            synthetic: SyntheticSpec { seed, ..SyntheticSpec::default() },
            options: PipelineOptions::default(),
            families: default_families(),
            ratios: default_ratios(),
            k: default_k(),
            seed,
            hpo_budget: None,
            out_dir: default_out(),
            jobs: 1,
            max_epochs: None,
            patience: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, PipelineError> {
        toml::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<Vec<ModelSpec>, PipelineError> {
        if self.ratios.is_empty() {
            return Err(invalid("ratios", "at least one ratio required"));
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid("ratios", format!("ratio {r} outside (0, 1)")));
            }
        }
        if self.k == 0 {
            return Err(invalid("k", "fold count must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(invalid("jobs", "parallelism must be at least 1"));
        }
        if self.families.is_empty() {
            return Err(invalid("families", "at least one family required"));
        }
        match self.dataset {
            DatasetKind::Dataset1 => {
                for (field, path) in
                    [("weather_csv", &self.weather_csv), ("generation_csv", &self.generation_csv)]
                {
                    let path = path
                        .as_ref()
                        .ok_or_else(|| invalid(field, "required for dataset1"))?;
                    if !path.exists() {
                        return Err(PipelineError::DatasetMissing(path.display().to_string()));
                    }
                }
            }
            DatasetKind::Dataset2 => {
                let path = self
                    .panel_csv
                    .as_ref()
                    .ok_or_else(|| invalid("panel_csv", "required for dataset2"))?;
                if !path.exists() {
                    return Err(PipelineError::DatasetMissing(path.display().to_string()));
                }
            }
            DatasetKind::Synthetic => {}
        }
        self.model_specs()
    }

    /// Parses family labels into model specs (`reg_` prefix selects the
    /// regularized variant).
    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, PipelineError> {
        let mut specs = Vec::new();
        for label in &self.families {
            let (name, regularized) = match label.strip_prefix("reg_") {
                Some(rest) => (rest, true),
                None => (label.as_str(), false),
            };
            let family: ModelFamily = name
                .parse()
                .map_err(|e: String| invalid("families", e))?;
            if regularized && family == ModelFamily::Arima {
                return Err(invalid("families", "arima has no regularized variant"));
            }
            let spec = if regularized {
                ModelSpec::regularized(family)
            } else {
                ModelSpec::preset(family)
            };
            specs.push(spec);
        }
        Ok(specs)
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

fn normalize_name(raw: &str) -> String {
    raw.trim().replace([' ', '-'], "_")
}

fn looks_like_timestamp(name: &str) -> bool {
    let lower = name.to_lowercase();
    lower.contains("time") || lower.contains("date") || lower == "dt_iso"
}

/// Reads the header and a sample of rows to classify each column:
/// timestamp by name, categoricals by failed numeric parses, and the
/// target by hint or known names.
pub fn infer_schema(
    path: &Path,
    target_hint: Option<&str>,
) -> Result<Vec<ColumnMeta>, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(IngestError::from)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(IngestError::from)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut samples: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records().take(200) {
        let record = record.map_err(IngestError::from)?;
        for (i, cell) in record.iter().enumerate() {
            if i < samples.len() && !cell.trim().is_empty() {
                samples[i].push(cell.trim().to_string());
            }
        }
    }

    let ts_index = headers
        .iter()
        .position(|h| looks_like_timestamp(h))
        .ok_or_else(|| invalid("dataset", format!("no timestamp-like column in {headers:?}")))?;

    let known_targets = ["renewable_total", "PolyPwr", "target"];
    let mut schema = Vec::with_capacity(headers.len());
    for (i, header) in headers.iter().enumerate() {
        let normalized = normalize_name(header);
        let kind = if i == ts_index {
            ColumnKind::Timestamp
        } else if target_hint.map(|t| t == normalized || t == *header).unwrap_or(false)
            || (target_hint.is_none() && known_targets.contains(&normalized.as_str()))
        {
            ColumnKind::Target
        } else {
            let numeric = samples[i].iter().filter(|c| c.parse::<f64>().is_ok()).count();
            if samples[i].is_empty() || numeric * 2 >= samples[i].len() {
                ColumnKind::Continuous
            } else {
                ColumnKind::Categorical
            }
        };
        schema.push(ColumnMeta::new(header, kind));
        let _ = normalized;
    }
    Ok(schema)
}

fn normalize_table_names(table: &mut TimeSeriesTable) -> Result<(), PipelineError> {
    let names = table.column_names();
    for name in names {
        let normalized = normalize_name(&name);
        if normalized != name {
            table.rename_column(&name, &normalized).map_err(PipelineError::from)?;
        }
    }
    Ok(())
}

/// Columns summed into a derived total-renewables target when the merged
/// table does not already carry one.
const RENEWABLE_PARTS: [&str; 4] =
    ["generation_hydro", "generation_solar", "generation_wind", "generation_other_renewable"];

fn derive_renewable_total(table: &mut TimeSeriesTable) -> Result<bool, PipelineError> {
    if table.column("renewable_total").is_some() {
        return Ok(false);
    }
    let parts: Vec<&str> =
        RENEWABLE_PARTS.iter().copied().filter(|n| table.column(n).is_some()).collect();
    if parts.is_empty() {
        return Ok(false);
    }
    let n = table.n_rows();
    let mut total: Vec<Option<f64>> = vec![Some(0.0); n];
    for name in &parts {
        let col = table.float_column(name).unwrap();
        for (acc, v) in total.iter_mut().zip(col) {
            *acc = match (acc.take(), v) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
    }
    table.push_column(
        ColumnMeta::new("renewable_total", ColumnKind::Target),
        ColumnValues::Float(total),
    )?;
    Ok(true)
}

/// Ensures exactly the requested target column carries the target kind.
fn set_target(table: &mut TimeSeriesTable, target: &str) -> Result<(), PipelineError> {
    let names = table.column_names();
    if !names.iter().any(|n| n == target) {
        return Err(invalid("target_column", format!("column {target} not found")));
    }
    for name in names {
        let col = table.column(&name).unwrap();
        let kind = col.meta.kind;
        if name == target && kind == ColumnKind::Continuous {
            let values = col.values.clone();
            table.replace_column(&name, ColumnKind::Target, values)?;
        } else if name != target && kind == ColumnKind::Target {
            let values = col.values.clone();
            table.replace_column(&name, ColumnKind::Continuous, values)?;
        }
    }
    Ok(())
}

/// Loads and assembles the configured dataset into a validated modeling
/// table (sparse columns dropped up front; imputation stays per-fold).
pub fn load_dataset(config: &RunConfig) -> Result<TimeSeriesTable, PipelineError> {
    let mut table = match config.dataset {
        DatasetKind::Synthetic => generate_synthetic(&config.synthetic)?,
        DatasetKind::Dataset1 => {
            let weather_path = config.weather_csv.as_ref().unwrap();
            let generation_path = config.generation_csv.as_ref().unwrap();
            let weather_schema = infer_schema(weather_path, None)?;
            let generation_schema = infer_schema(generation_path, None)?;
            let weather = load_csv_table(weather_path, &weather_schema, Frequency::Hourly)?;
            let generation =
                load_csv_table(generation_path, &generation_schema, Frequency::Hourly)?;
            let mut merged = merge_hourly(&weather, &generation)?;
            normalize_table_names(&mut merged)?;
            derive_renewable_total(&mut merged)?;
            merged
        }
        DatasetKind::Dataset2 => {
            let panel_path = config.panel_csv.as_ref().unwrap();
            let schema = infer_schema(panel_path, config.target_column.as_deref())?;
            let mut table = load_csv_table(panel_path, &schema, Frequency::Hourly)?;
            normalize_table_names(&mut table)?;
            table
        }
    };

    if let Some(target) = &config.target_column {
        set_target(&mut table, target)?;
    }
    if table.target_columns().is_empty() {
        return Err(invalid("target_column", "no target column found or derivable"));
    }

    let (table, _dropped) = drop_sparse_columns(&table, config.options.sparse_threshold)?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// Reports (descriptive stats, stationarity, mutual information, PCA)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub stats: SummaryStats,
}

/// One row of the stationarity table: variable, ADF statistic, KPSS
/// statistic, ADF p-value, lags used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityRow {
    pub variable: String,
    pub adf_stat: f64,
    pub kpss_stat: f64,
    pub p_value: f64,
    pub lags_used: usize,
    pub kpss_pvalue: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutualInformationRow {
    pub variable: String,
    pub nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub selected_components: usize,
    pub variance_target: f64,
    pub model: PcaModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    pub summary: Vec<ColumnSummary>,
    pub stationarity: Vec<StationarityRow>,
    pub mutual_information: Vec<MutualInformationRow>,
    pub pca: Option<PcaSummary>,
    pub correlation: Option<CorrelationReport>,
}

/// Descriptive statistics, per-variable stationarity, mutual information
/// against the target, and a whole-data PCA. These are informational
/// tables computed over all rows; the modeling pipeline refits everything
/// per fold.
pub fn build_reports(
    table: &TimeSeriesTable,
    opts: &PipelineOptions,
) -> Result<Reports, PipelineError> {
    let target_name = table
        .target_columns()
        .first()
        .map(|c| c.meta.name.clone())
        .ok_or_else(|| invalid("target_column", "reports need a target column"))?;

    let full = 0..table.n_rows();
    let (imputed, _) = impute_gaps(table, full.clone())?;
    let with_calendar = crate::features::add_cyclical_calendar(&imputed)?;

    let mut summary = Vec::new();
    let mut stationarity = Vec::new();
    let mut mutual_information_rows = Vec::new();
    let target_series = with_calendar.dense_float_column(&target_name)?;

    for column in with_calendar.columns() {
        let (name, values) = match (&column.meta.kind, &column.values) {
            (ColumnKind::Continuous | ColumnKind::Target, ColumnValues::Float(v)) => {
                let dense: Vec<f64> = v.iter().map(|x| x.unwrap()).collect();
                (column.meta.name.clone(), dense)
            }
            _ => continue,
        };
        if let Ok(stats) = summary_stats(&values) {
            summary.push(ColumnSummary { name: name.clone(), stats });
        }
        match stationarity_report(&values) {
            Ok(report) => stationarity.push(StationarityRow {
                variable: name.clone(),
                adf_stat: report.adf_stat,
                kpss_stat: report.kpss_stat,
                p_value: report.adf_pvalue,
                lags_used: report.lags_used,
                kpss_pvalue: report.kpss_pvalue,
                verdict: report.verdict,
            }),
            Err(StatsError::DegenerateSeries) | Err(StatsError::SingularDesign) => {}
            Err(e) => return Err(e.into()),
        }
        if name != target_name {
            let nats = mutual_information(&values, &target_series, 16)?;
            mutual_information_rows.push(MutualInformationRow { variable: name, nats });
        }
    }

    // Whole-data PCA on the scaled feature matrix, loading report only.
    let scaling = fit_minmax(&with_calendar, full.clone())?;
    let pca = {
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for c in with_calendar.feature_columns() {
            if c.meta.name == target_name {
                continue;
            }
            let dense = with_calendar.dense_float_column(&c.meta.name)?;
            let scaled = crate::features::scale(
                &dense,
                &c.meta.name,
                &scaling,
                crate::features::ScaleDirection::Forward,
            )?;
            names.push(c.meta.name.clone());
            columns.push(scaled);
        }
        if columns.len() >= 2 {
            let mut matrix = crate::linalg::Matrix::zeros(with_calendar.n_rows(), columns.len());
            for (j, col) in columns.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    matrix.set(i, j, *v);
                }
            }
            match pca_fit(&matrix, opts.variance_target) {
                Ok(model) => Some(PcaSummary {
                    selected_components: model.n_components(),
                    variance_target: opts.variance_target,
                    model,
                }),
                Err(StatsError::ZeroVariance) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        }
    };

    let correlation = match correlation_filter(
        &with_calendar,
        &target_name,
        opts.corr_threshold,
        full,
    ) {
        Ok(outcome) => Some(outcome.report),
        Err(FeatureError::ZeroVarianceTarget) => None,
        Err(e) => return Err(e.into()),
    };

    Ok(Reports {
        summary,
        stationarity,
        mutual_information: mutual_information_rows,
        pca,
        correlation,
    })
}

// ---------------------------------------------------------------------------
// Manifest and execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanRow {
    pub metric: String,
    pub df: usize,
    pub chi_squared: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoEntry {
    pub family: ModelFamily,
    pub budget: usize,
    pub best: TrialResult,
    pub refined: TrialResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub reports: Option<Reports>,
    pub plans: Vec<PlanEntry>,
    pub sweep: Option<RatioSweepReport>,
    pub friedman: Vec<FriedmanRow>,
    pub hpo: Vec<HpoEntry>,
}

impl Manifest {
    fn initial(config: &RunConfig) -> Manifest {
        Manifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            reports: None,
            plans: Vec::new(),
            sweep: None,
            friedman: Vec::new(),
            hpo: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        serde_json::to_string_pretty(self).map_err(|e| PipelineError::Manifest(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Manifest, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Manifest(e.to_string()))
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub failed_cells: usize,
    pub total_cells: usize,
}

fn write_manifest(manifest: &Manifest, out_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("manifest.json"), manifest.to_json()?)?;
    Ok(())
}

/// Runs the full protocol: ingest, reports, optional hyperparameter
/// search, the ratio sweep, the Friedman comparison, and report emission.
pub fn execute_config(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    let mut specs = config.validate()?;
    let table = load_dataset(config)?;

    // Crash-auditable: the manifest exists before any model trains.
    let mut manifest = Manifest::initial(config);
    write_manifest(&manifest, &config.out_dir)?;

    manifest.reports = Some(build_reports(&table, &config.options)?);
    write_manifest(&manifest, &config.out_dir)?;

    if let Some(budget) = config.hpo_budget {
        let searched = run_hpo_stage(config, &table, budget, &mut specs)?;
        manifest.hpo = searched;
    }

    let output = ratio_sweep(
        &specs,
        &table,
        &config.options,
        &config.ratios,
        config.k,
        config.seed,
        config.jobs,
    );
    manifest.plans = output.plans;

    let friedman_rows: Vec<FriedmanRow> = friedman_table(&output.report)
        .into_iter()
        .filter_map(|(metric, result)| {
            result.ok().map(|r| FriedmanRow {
                metric,
                df: r.df,
                chi_squared: r.chi_squared,
                p_value: r.p_value,
            })
        })
        .collect();
    manifest.friedman = friedman_rows.clone();
    manifest.sweep = Some(output.report.clone());

    let manifest_json = manifest.to_json()?;
    let friedman_results: Vec<(String, FriedmanResult)> = friedman_rows
        .iter()
        .map(|row| {
            (
                row.metric.clone(),
                FriedmanResult {
                    chi_squared: row.chi_squared,
                    df: row.df,
                    p_value: row.p_value,
                    rank_sums: Vec::new(),
                },
            )
        })
        .collect();
    let files = emit_report(&output.report, &friedman_results, &manifest_json, &config.out_dir)?;

    let failed = output.report.cells.iter().filter(|c| c.error.is_some()).count();
    Ok(RunSummary {
        out_dir: config.out_dir.clone(),
        files,
        failed_cells: failed,
        total_cells: output.report.cells.len(),
    })
}

fn run_hpo_stage(
    config: &RunConfig,
    table: &TimeSeriesTable,
    budget: usize,
    specs: &mut [ModelSpec],
) -> Result<Vec<HpoEntry>, PipelineError> {
    let space = SearchSpace::default();
    let splits = trial_splits(table, &config.options)?;
    let families: BTreeSet<ModelFamily> = specs
        .iter()
        .filter(|s| s.family != ModelFamily::Arima)
        .map(|s| s.family)
        .collect();

    let mut entries = Vec::new();
    for (i, family) in families.into_iter().enumerate() {
        let seed = crate::rng::SeedRng::new(config.seed).derive(7_000 + i as u64).seed();
        let ranked = random_search(&space, family, &splits, budget, seed)?;
        write_trial_log(
            &ranked,
            &config.out_dir.join(format!("hpo_{}_random.csv", family.name())),
        )?;
        let refined = grid_refine(&ranked[0], &space, family, &splits, seed ^ 0xa5a5)?;
        write_trial_log(
            &refined.evaluations,
            &config.out_dir.join(format!("hpo_{}_grid.csv", family.name())),
        )?;

        // adopt the refined configuration for the final sweep
        for spec in specs.iter_mut().filter(|s| s.family == family) {
            let tuned = refined.best.config.to_model_spec(family);
            spec.layer_widths = tuned.layer_widths.clone();
            spec.activations = tuned.activations.clone();
            spec.learning_rate = tuned.learning_rate;
            spec.dropout_rate = tuned.dropout_rate;
            spec.batch_size = tuned.batch_size;
        }
        entries.push(HpoEntry { family, budget, best: ranked[0].clone(), refined: refined.best });
    }
    Ok(entries)
}

/// Re-emits the CSV, plot, and manifest artifacts from a previously
/// written manifest, without retraining anything.
pub fn reemit_from_manifest(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let manifest = Manifest::from_json(&std::fs::read_to_string(manifest_path)?)?;
    let report = manifest
        .sweep
        .as_ref()
        .ok_or_else(|| PipelineError::Manifest("manifest has no sweep section".into()))?;
    let friedman: Vec<(String, FriedmanResult)> = manifest
        .friedman
        .iter()
        .map(|row| {
            (
                row.metric.clone(),
                FriedmanResult {
                    chi_squared: row.chi_squared,
                    df: row.df,
                    p_value: row.p_value,
                    rank_sums: Vec::new(),
                },
            )
        })
        .collect();
    let json = manifest.to_json()?;
    Ok(emit_report(report, &friedman, &json, out_dir)?)
}

/// Formats the descriptive and stationarity tables as plain text, the
/// `inspect` subcommand's output.
pub fn render_inspection(reports: &Reports) -> String {
    use crate::eval::format_significant as sig;
    let mut out = String::new();
    out.push_str("Descriptive statistics\n");
    out.push_str("variable,mean,median,std,skewness,kurtosis,min,max\n");
    for row in &reports.summary {
        let s = &row.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.name,
            sig(s.mean),
            sig(s.median),
            sig(s.std),
            sig(s.skewness),
            sig(s.kurtosis),
            sig(s.min),
            sig(s.max)
        ));
    }
    out.push_str("\nStationarity tests\n");
    out.push_str("variable,adf_stat,kpss_stat,p_value,lags_used,verdict\n");
    for row in &reports.stationarity {
        out.push_str(&format!(
            "{},{},{},{:e},{},{}\n",
            row.variable,
            sig(row.adf_stat),
            sig(row.kpss_stat),
            row.p_value,
            row.lags_used,
            match row.verdict {
                Verdict::Stationary => "stationary",
                Verdict::NonStationary => "non_stationary",
            }
        ));
    }
    out.push_str("\nMutual information against the target (nats)\n");
    for row in &reports.mutual_information {
        out.push_str(&format!("{},{}\n", row.variable, sig(row.nats)));
    }
    if let Some(pca) = &reports.pca {
        out.push_str(&format!(
            "\nPCA: {} components reach {:.0}% of variance\n",
            pca.selected_components,
            pca.variance_target * 100.0
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Column;

    fn base_config(out: &Path) -> RunConfig {
        RunConfig {
            families: vec!["dnn".into()],
            ratios: vec![0.2],
            k: 1,
            synthetic: SyntheticSpec {
                n_rows: 400,
                noise_std: 0.05,
                missing_rate: 0.0,
                seed: 3,
                ..SyntheticSpec::default()
            },
            options: PipelineOptions {
                lookback: 8,
                stationarize: false,
                ..PipelineOptions::default()
            },
            max_epochs: Some(3),
            patience: Some(3),
            out_dir: out.to_path_buf(),
            ..RunConfig::synthetic_default(7)
        }
    }

    #[test]
    fn invalid_ratio_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.ratios = vec![1.5];
        match execute_config(&config) {
            Err(PipelineError::ConfigInvalid { field, .. }) => assert_eq!(field, "ratios"),
            other => panic!("unexpected: {other:?}"),
        }
        // nothing was written
        assert!(!dir.path().join("manifest.json").exists());
    }

    #[test]
    fn unknown_family_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.families = vec!["perceptronx".into()];
        assert!(matches!(
            execute_config(&config),
            Err(PipelineError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn config_file_round_trips() {
        let text = r#"
            seed = 11
            families = ["dnn", "reg_dnn", "arima"]
            ratios = [0.2, 0.3]
            k = 2

            [options]
            impute = true
            encode = true
            stationarize = false
            correlation_filter = true
            pca = false
            sparse_threshold = 0.15
            corr_threshold = 0.1
            variance_target = 0.8
            lookback = 12
        "#;
        let config = RunConfig::from_toml(text).unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.families.len(), 3);
        assert_eq!(config.options.lookback, 12);
        let specs = config.model_specs().unwrap();
        assert!(specs[1].regularized);
    }

    #[test]
    fn missing_seed_is_rejected() {
        assert!(RunConfig::from_toml("families = [\"dnn\"]").is_err());
    }

    #[test]
    fn renewable_total_is_derived_from_parts() {
        let n = 4;
        let mut columns = vec![Column {
            meta: ColumnMeta::new("timestamp", ColumnKind::Timestamp),
            values: ColumnValues::Time((0..n as i64).map(|i| i * 3600).collect()),
        }];
        for (name, base) in [("generation_hydro", 1.0), ("generation_solar", 10.0)] {
            columns.push(Column {
                meta: ColumnMeta::new(name, ColumnKind::Continuous),
                values: ColumnValues::Float((0..n).map(|i| Some(base + i as f64)).collect()),
            });
        }
        let mut table = TimeSeriesTable::new(columns, Frequency::Hourly).unwrap();
        assert!(derive_renewable_total(&mut table).unwrap());
        let total = table.dense_float_column("renewable_total").unwrap();
        assert_eq!(total, vec![11.0, 13.0, 15.0, 17.0]);
        assert_eq!(table.target_columns()[0].meta.name, "renewable_total");
    }
}
