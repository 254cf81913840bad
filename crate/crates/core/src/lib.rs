//! Emergence lab: measures path-count emergence of neural networks during training,
//! applies magnitude pruning, and runs the pruning/emergence experiment protocols.

pub mod data;
pub mod emergence;
pub mod harness;
pub mod instrument;
pub mod nn;
pub mod pruning;

mod error;

pub use error::Error;
