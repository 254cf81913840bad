//! Small deterministic network engine: dense and conv layers, max pooling, ReLU,
//! softmax cross-entropy and plain minibatch SGD with prune masks.

mod arch;
mod dataset;
mod network;
mod train;

use thiserror::Error;

pub use arch::{Activation, ArchitectureSpec, LayerSpec, PoolKind, Shape};
pub use dataset::{Dataset, Split};
pub use network::{
    argmax_rows, build_network, softmax, ActivationTrace, Gradients, LayerParams, Network, Scalar, TraceLayer,
    UnitKind,
};
pub use train::{
    count_parameters, epoch_order, evaluate, predict, train_epoch, EpochStats, LossKind, ParamCount, TrainConfig,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: u64, batch: usize, loss: f64 },
}
