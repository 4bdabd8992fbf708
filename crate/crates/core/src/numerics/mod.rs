//! Differentiable primitives, recurrent cells, optimizer and gradient utilities.

mod graph;
mod optim;
mod params;
mod recurrent;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, clip_grad_norm, AdamState};
pub use params::{ParamId, ParameterStore};
pub use recurrent::{bilstm_encode, BiLstmIds, BiLstmOutput, LstmLayerIds};
pub use tensor::{gemm_into, Real, Tensor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Uniform half-width of every weight under [`Init::Fixed`].
pub const INIT_RANGE: f64 = 0.08;

/// Weight initialization scheme. Biases always start at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Every weight and embedding from `uniform(-0.08, 0.08)`.
    Fixed,
    /// Weights from `uniform(±1/√fan)`, where `fan` is the input width of
    /// dense layers and the hidden width of LSTM cells; embeddings with unit
    /// variance.
    #[default]
    FanIn,
}

impl Init {
    pub fn weight_range(self, fan: usize) -> f64 {
        match self {
            Init::Fixed => INIT_RANGE,
            Init::FanIn => 1.0 / (fan.max(1) as f64).sqrt(),
        }
    }

    pub fn embedding_range(self) -> f64 {
        match self {
            Init::Fixed => INIT_RANGE,
            Init::FanIn => 3f64.sqrt(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("symbol index {index} is outside a vocabulary of {vocab}")]
    IndexOutOfVocab { index: usize, vocab: usize },
    #[error("every position is masked; the loss is undefined")]
    AllMasked,
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
}
