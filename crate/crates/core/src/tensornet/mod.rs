//! Minimal differentiable-network core: tensors, sequential layer stacks,
//! losses, Adam and a binary weight checkpoint.

use thiserror::Error;

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod network;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, NetworkRecord,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{
    build_layer, softmax_slice, BatchNorm, Conv1d, Conv2d, Dense, GlobalAvgPool1d, Layer,
    LayerSpec, Param, Relu, Reshape, Sigmoid, Softmax, TransposedConv2d, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
};
pub use loss::{binary_cross_entropy, cross_entropy, mse};
pub use network::Sequential;
pub use tensor::{matmul, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("backward called without a cached train-mode forward")]
    NoCachedForward,
    #[error("class {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
mod tests;
