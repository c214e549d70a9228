//! Minimal deterministic neural network core: tensors, layers, MSE loss
//! with an optional L2 penalty, Adam and RMSprop, and a seeded training
//! loop with early stopping.

pub mod gradcheck;
pub mod layer;
mod loss;
mod optim;
pub mod tensor;
mod train;

pub use layer::{Activation, Conv1d, Dense, Dropout, ExpandTime, Layer, Lstm, MeanOverTime, SelectLast};
pub use loss::{l2_penalty, mse_loss, rmse};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
pub use train::{fit, predict, EpochMetrics, FitOutcome, TrainConfig, WindowedData};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("sequence of length {len} is shorter than the kernel width {width}")]
    SequenceTooShort { len: usize, width: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("backward called without a preceding forward")]
    MissingForward,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergenceDetected { epoch: usize },
    #[error("empty dataset")]
    EmptyData,
}

/// A sequential stack of layers. One gradient tensor is held per parameter
/// tensor, congruent in shape; both are reachable through the layer trait.
pub struct Model {
    layers: Vec<Box<dyn Layer>>,
}

/// Gradients of every parameter tensor, in parameter traversal order.
pub type GradientSet = Vec<Tensor>;

impl Model {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Model {
        Model { layers }
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn forward_train(
        &mut self,
        input: &Tensor,
        rng: &mut crate::rng::SeedRng,
    ) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, rng)?;
        }
        Ok(x)
    }

    /// Evaluation-mode forward pass. Dropout is a pass-through and nothing
    /// is cached, so a trained model can be shared immutably.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.grads()).collect()
    }

    pub fn grads_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.grads_mut()).collect()
    }

    /// Clones the current gradients.
    pub fn gradient_set(&self) -> GradientSet {
        self.grads().into_iter().cloned().collect()
    }

    pub fn weight_flags(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| l.weight_flags()).collect()
    }

    /// References to the L2-penalized weight tensors (biases excluded).
    pub fn weight_tensors(&self) -> Vec<&Tensor> {
        self.params()
            .into_iter()
            .zip(self.weight_flags())
            .filter_map(|(p, is_weight)| is_weight.then_some(p))
            .collect()
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers.iter().any(|l| l.is_recurrent())
    }

    /// Exact count of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        let mut params = self.params_mut();
        assert_eq!(params.len(), snapshot.len(), "snapshot layout mismatch");
        for (p, s) in params.iter_mut().zip(snapshot) {
            p.data_mut().copy_from_slice(s);
        }
    }

    /// All parameters flattened in traversal order, for checkpoints.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let expected: usize = self.param_count();
        if flat.len() != expected {
            return Err(NnError::LengthMismatch(expected, flat.len()));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
