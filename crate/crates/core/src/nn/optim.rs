//! Adam and RMSprop parameter updates.

use serde::{Deserialize, Serialize};

use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(format!("unknown optimizer: {other}")),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_DECAY: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Per-parameter optimizer state. Moment buffers are laid out in the same
/// traversal order as the model's parameter tensors.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_sizes: &[usize]) -> Optimizer {
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(kind: OptimizerKind, learning_rate: f64, model: &crate::nn::Model) -> Optimizer {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Optimizer::new(kind, learning_rate, &sizes)
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), grads.len(), "params/grads layout mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer state layout mismatch");
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step_count as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step_count as i32);
                for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[idx];
                    let v = &mut self.v[idx];
                    for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gv;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gv * gv;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let v = &mut self.v[idx];
                    for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        v[i] = RMSPROP_DECAY * v[i] + (1.0 - RMSPROP_DECAY) * gv * gv;
                        *pv -= self.learning_rate * gv / (v[i].sqrt() + EPS);
                    }
                }
            }
        }
    }
}
