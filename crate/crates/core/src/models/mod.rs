//! Declarative construction of the forecasting architectures: seven neural
//! families plus an ARIMA baseline, window extraction, parameter counting,
//! and flat-parameter checkpoints.

mod arima;

pub use arima::{arima_fit_forecast, ArimaFit, ArimaParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::nn::layer::{Activation, Conv1d, Dense, Dropout, ExpandTime, Layer, Lstm, MeanOverTime, SelectLast};
use crate::nn::{Model, NnError, OptimizerKind, Tensor, TrainConfig, WindowedData};
use crate::rng::SeedRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("table too short: {rows} rows with lookback {lookback}")]
    TooShort { rows: usize, lookback: usize },
    #[error("estimation failed to converge")]
    NonConvergence,
    #[error("invalid orders: {0}")]
    InvalidOrders(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Lstm,
    StackedLstm,
    Cnn,
    CnnLstm,
    Dnn,
    TimeDistributedMlp,
    EncoderDecoder,
    Arima,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 8] = [
        ModelFamily::Lstm,
        ModelFamily::StackedLstm,
        ModelFamily::Cnn,
        ModelFamily::CnnLstm,
        ModelFamily::Dnn,
        ModelFamily::TimeDistributedMlp,
        ModelFamily::EncoderDecoder,
        ModelFamily::Arima,
    ];

    pub const NEURAL: [ModelFamily; 7] = [
        ModelFamily::Lstm,
        ModelFamily::StackedLstm,
        ModelFamily::Cnn,
        ModelFamily::CnnLstm,
        ModelFamily::Dnn,
        ModelFamily::TimeDistributedMlp,
        ModelFamily::EncoderDecoder,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Lstm => "lstm",
            ModelFamily::StackedLstm => "stacked_lstm",
            ModelFamily::Cnn => "cnn",
            ModelFamily::CnnLstm => "cnn_lstm",
            ModelFamily::Dnn => "dnn",
            ModelFamily::TimeDistributedMlp => "time_distributed_mlp",
            ModelFamily::EncoderDecoder => "encoder_decoder",
            ModelFamily::Arima => "arima",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "lstm" => Ok(ModelFamily::Lstm),
            "stacked_lstm" => Ok(ModelFamily::StackedLstm),
            "cnn" => Ok(ModelFamily::Cnn),
            "cnn_lstm" => Ok(ModelFamily::CnnLstm),
            "dnn" => Ok(ModelFamily::Dnn),
            "time_distributed_mlp" => Ok(ModelFamily::TimeDistributedMlp),
            "encoder_decoder" => Ok(ModelFamily::EncoderDecoder),
            "arima" => Ok(ModelFamily::Arima),
            other => Err(format!("unknown model family: {other}")),
        }
    }
}

/// Convolution kernel width used by the CNN families (stride 1, valid
/// padding).
pub const CONV_KERNEL_WIDTH: usize = 3;

/// L2 strength applied by regularized variants.
pub const REGULARIZED_L2: f64 = 1e-4;

/// Declarative architecture description. `preset` loads the tuned default
/// configuration of each family; `regularized` additionally enables
/// dropout and the L2 penalty (an unregularized spec forces both to zero
/// in the built model, whatever the fields say).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub regularized: bool,
    /// (p, d, q); only meaningful for the ARIMA family.
    pub arima_orders: (usize, usize, usize),
}

impl ModelSpec {
    pub fn preset(family: ModelFamily) -> ModelSpec {
        let base = ModelSpec {
            family,
            layer_widths: vec![],
            activations: vec![],
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            dropout_rate: 0.0,
            l2_lambda: REGULARIZED_L2,
            batch_size: 64,
            regularized: false,
            arima_orders: (2, 1, 2),
        };
        match family {
            ModelFamily::Lstm => ModelSpec {
                layer_widths: vec![64, 64, 32],
                activations: vec![Activation::Tanh],
                dropout_rate: 0.3,
                ..base
            },
            ModelFamily::StackedLstm => ModelSpec {
                layer_widths: vec![128, 128, 64, 32],
                activations: vec![Activation::Tanh],
                dropout_rate: 0.3,
                ..base
            },
            ModelFamily::Cnn => ModelSpec {
                layer_widths: vec![64, 128, 64],
                activations: vec![Activation::Relu],
                learning_rate: 5e-4,
                dropout_rate: 0.25,
                batch_size: 32,
                ..base
            },
            ModelFamily::CnnLstm => ModelSpec {
                layer_widths: vec![64, 128, 64],
                activations: vec![Activation::Relu, Activation::Tanh],
                dropout_rate: 0.3,
                ..base
            },
            ModelFamily::Dnn => ModelSpec {
                layer_widths: vec![256, 128, 64, 32],
                activations: vec![Activation::Relu],
                dropout_rate: 0.4,
                batch_size: 128,
                ..base
            },
            ModelFamily::TimeDistributedMlp => ModelSpec {
                layer_widths: vec![128, 64, 32],
                activations: vec![Activation::Relu],
                learning_rate: 5e-4,
                dropout_rate: 0.2,
                optimizer: OptimizerKind::Rmsprop,
                ..base
            },
            ModelFamily::EncoderDecoder => ModelSpec {
                layer_widths: vec![128, 64],
                activations: vec![Activation::Tanh],
                learning_rate: 5e-4,
                dropout_rate: 0.3,
                ..base
            },
            ModelFamily::Arima => base,
        }
    }

    pub fn regularized(family: ModelFamily) -> ModelSpec {
        ModelSpec { regularized: true, ..ModelSpec::preset(family) }
    }

    /// Stable external identifier: the family name, with a `reg_` prefix
    /// for regularized variants.
    pub fn label(&self) -> String {
        if self.regularized {
            format!("reg_{}", self.family.name())
        } else {
            self.family.name().to_string()
        }
    }

    pub fn effective_dropout(&self) -> f64 {
        if self.regularized {
            self.dropout_rate
        } else {
            0.0
        }
    }

    pub fn effective_l2(&self) -> f64 {
        if self.regularized {
            self.l2_lambda
        } else {
            0.0
        }
    }

    pub fn dense_activation(&self) -> Activation {
        *self.activations.first().unwrap_or(&Activation::Relu)
    }

    pub fn train_config(&self, seed: u64, lookback: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            dropout_rate: self.effective_dropout(),
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            l2_lambda: self.effective_l2(),
            seed,
            lookback,
            ..TrainConfig::default()
        }
    }
}

/// Window geometry for supervised extraction: `lookback` consecutive steps
/// of `feature_count` inputs predict the next target value (horizon one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub feature_count: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, feature_count: usize) -> WindowSpec {
        WindowSpec { lookback, horizon: 1, feature_count }
    }
}

struct Builder {
    layers: Vec<Box<dyn Layer>>,
    dropout: f64,
}

impl Builder {
    fn new(dropout: f64) -> Builder {
        Builder { layers: Vec::new(), dropout }
    }

    fn push(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    /// Hidden layer followed by dropout when enabled.
    fn hidden(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
        if self.dropout > 0.0 {
            self.layers.push(Box::new(Dropout::new(self.dropout)));
        }
    }
}

/// Materializes a neural family for `feature_count`-dimensional windows.
/// Initial weights depend only on (spec topology, seed): regularized and
/// unregularized variants of the same family start from identical weights
/// because dropout layers draw nothing at construction time.
pub fn build_model(spec: &ModelSpec, window: &WindowSpec, seed: u64) -> Result<Model, ModelError> {
    if spec.family == ModelFamily::Arima {
        return Err(ModelError::InvalidSpec(
            "the arima family is estimated directly, not built as a network".into(),
        ));
    }
    if spec.layer_widths.is_empty() {
        return Err(ModelError::InvalidSpec("layer_widths must not be empty".into()));
    }
    let d = window.feature_count;
    if d == 0 {
        return Err(ModelError::InvalidSpec("feature_count must be positive".into()));
    }
    let mut rng = SeedRng::new(seed);
    let act = spec.dense_activation();
    let widths = &spec.layer_widths;
    let mut b = Builder::new(spec.effective_dropout());

    match spec.family {
        ModelFamily::Lstm | ModelFamily::StackedLstm => {
            let mut input = d;
            for &w in widths {
                b.hidden(Box::new(Lstm::new(input, w, &mut rng)));
                input = w;
            }
            b.push(Box::new(SelectLast::new()));
            b.push(Box::new(Dense::new(input, 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::Dnn => {
            b.push(Box::new(SelectLast::new()));
            let mut input = d;
            for &w in widths {
                b.hidden(Box::new(Dense::new(input, w, act, &mut rng)));
                input = w;
            }
            b.push(Box::new(Dense::new(input, 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::TimeDistributedMlp => {
            let mut input = d;
            for &w in widths {
                b.hidden(Box::new(Dense::new(input, w, act, &mut rng)));
                input = w;
            }
            b.push(Box::new(MeanOverTime::new()));
            b.push(Box::new(Dense::new(input, 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::Cnn => {
            if widths.len() < 2 {
                return Err(ModelError::InvalidSpec(
                    "cnn needs at least one conv width and one dense width".into(),
                ));
            }
            let (conv_widths, dense_width) = widths.split_at(widths.len() - 1);
            let mut channels = d;
            for &filters in conv_widths {
                b.hidden(Box::new(Conv1d::new(channels, filters, CONV_KERNEL_WIDTH, act, &mut rng)));
                channels = filters;
            }
            b.push(Box::new(MeanOverTime::new()));
            b.hidden(Box::new(Dense::new(channels, dense_width[0], act, &mut rng)));
            b.push(Box::new(Dense::new(dense_width[0], 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::CnnLstm => {
            if widths.len() < 2 {
                return Err(ModelError::InvalidSpec(
                    "cnn_lstm needs at least one conv width and one recurrent width".into(),
                ));
            }
            let (conv_widths, lstm_width) = widths.split_at(widths.len() - 1);
            let mut channels = d;
            for &filters in conv_widths {
                b.hidden(Box::new(Conv1d::new(channels, filters, CONV_KERNEL_WIDTH, act, &mut rng)));
                channels = filters;
            }
            b.hidden(Box::new(Lstm::new(channels, lstm_width[0], &mut rng)));
            b.push(Box::new(SelectLast::new()));
            b.push(Box::new(Dense::new(lstm_width[0], 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::EncoderDecoder => {
            if widths.len() < 2 {
                return Err(ModelError::InvalidSpec(
                    "encoder_decoder needs encoder and decoder widths".into(),
                ));
            }
            let (enc_widths, dec_width) = widths.split_at(widths.len() - 1);
            let mut input = d;
            for &w in enc_widths {
                b.hidden(Box::new(Lstm::new(input, w, &mut rng)));
                input = w;
            }
            // decoder unrolls one step from the encoder summary state
            b.push(Box::new(SelectLast::new()));
            b.push(Box::new(ExpandTime));
            b.hidden(Box::new(Lstm::new(input, dec_width[0], &mut rng)));
            b.push(Box::new(SelectLast::new()));
            b.push(Box::new(Dense::new(dec_width[0], 1, Activation::Identity, &mut rng)));
        }
        ModelFamily::Arima => unreachable!(),
    }

    Ok(Model::new(b.layers))
}

/// Exact trainable scalar count of a built model.
pub fn count_parameters(model: &Model) -> usize {
    model.param_count()
}

/// Sliding windows over a feature matrix: `count = rows - lookback`, and
/// window i predicts the target at row `i + lookback`. Callers build
/// windows per partition so none straddles a split boundary.
pub fn make_windows(
    features: &Matrix,
    target: &[f64],
    lookback: usize,
) -> Result<WindowedData, ModelError> {
    let n = features.rows;
    let d = features.cols;
    assert_eq!(n, target.len(), "feature/target row mismatch");
    if n <= lookback || lookback == 0 {
        return Err(ModelError::TooShort { rows: n, lookback });
    }
    let count = n - lookback;
    let mut data = Vec::with_capacity(count * lookback * d);
    let mut y = Vec::with_capacity(count);
    for i in 0..count {
        data.extend_from_slice(&features.data[i * d..(i + lookback) * d]);
        y.push(target[i + lookback]);
    }
    Ok(WindowedData::new(Tensor::from_vec(&[count, lookback, d], data), y)?)
}

const CHECKPOINT_VERSION: u32 = 1;

/// Model checkpoint: architecture spec plus the flat parameter array
/// (little-endian 64-bit floats, hex encoded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub feature_count: usize,
    pub lookback: usize,
    pub params_le_hex: String,
}

pub fn to_checkpoint(
    spec: &ModelSpec,
    window: &WindowSpec,
    model: &Model,
) -> Checkpoint {
    let mut hex = String::with_capacity(model.param_count() * 16);
    for v in model.flat_params() {
        for byte in v.to_le_bytes() {
            hex.push_str(&format!("{byte:02x}"));
        }
    }
    Checkpoint {
        format_version: CHECKPOINT_VERSION,
        spec: spec.clone(),
        feature_count: window.feature_count,
        lookback: window.lookback,
        params_le_hex: hex,
    }
}

pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<(ModelSpec, Model), ModelError> {
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {}",
            checkpoint.format_version
        )));
    }
    let bytes = checkpoint.params_le_hex.as_bytes();
    if bytes.len() % 16 != 0 {
        return Err(ModelError::Checkpoint("parameter hex length must be a multiple of 16".into()));
    }
    let mut params = Vec::with_capacity(bytes.len() / 16);
    let decode = |b: u8| -> Result<u8, ModelError> {
        match b {
            b'0'..=b'9' => Ok(b - b'0'),
            b'a'..=b'f' => Ok(b - b'a' + 10),
            b'A'..=b'F' => Ok(b - b'A' + 10),
            _ => Err(ModelError::Checkpoint("invalid hex digit".into())),
        }
    };
    for chunk in bytes.chunks(16) {
        let mut raw = [0u8; 8];
        for (i, pair) in chunk.chunks(2).enumerate() {
            raw[i] = decode(pair[0])? * 16 + decode(pair[1])?;
        }
        params.push(f64::from_le_bytes(raw));
    }
    let window = WindowSpec::new(checkpoint.lookback, checkpoint.feature_count);
    let mut model = build_model(&checkpoint.spec, &window, 0)?;
    model.load_flat_params(&params)?;
    Ok((checkpoint.spec.clone(), model))
}
