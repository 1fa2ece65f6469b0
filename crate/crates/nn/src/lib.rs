//! Float-shadow neural network training for encrypted inference.
//!
//! Models train on ordinary floats but run their forward pass through the
//! same discretized integer weights the encrypted engine will use, so the
//! value path of training, plaintext evaluation, and encrypted evaluation
//! agree exactly. Gradients flow through the rounding steps with the
//! straight-through estimator. Activity gates with a hard-concrete
//! relaxation prune whole feature maps during training; pruned maps export
//! as zero gate masks, which the compiler elides.

mod export;
mod gates;
mod layers;
mod loss;
mod model;
mod optim;
mod serial;
mod train;

pub use export::{export, to_graph, DiscreteLayer, DiscretizedModel, TensorI};
pub use gates::{inference_gates, l0_penalty, sample_gate, L0Config, L0Gate};
pub use layers::{ConvLayer, DenseLayer, Layer, LayerGrads, Mode};
pub use loss::softmax_cross_entropy;
pub use model::{Grads, ModelBuilder, Sequential};
pub use optim::Adam;
pub use serial::{LayerFile, ModelFile, TensorF};
pub use train::{evaluate, loss_and_grads, train, Dataset, EpochStats, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad parameter: {0}")]
    Parameter(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Graph(#[from] slhe_core::graph::GraphError),
    #[error("model file: {0}")]
    Serialization(String),
}

/// Round half away from zero, the rounding used for every weight, bias, and
/// training-time gate discretization.
pub(crate) fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Round half to even, used only for the deterministic inference gates so a
/// gate sitting exactly on the decision boundary has a documented tie rule.
pub(crate) fn round_half_even(v: f64) -> f64 {
    let r = v.round();
    if (v - v.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - v.signum()
    } else {
        r
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
