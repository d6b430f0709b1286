//! Minimal reverse-mode autodiff for small convolutional image networks.
//!
//! Tensors are dense and row-major (NCHW for image batches). The element type
//! is generic so training runs in `f32` while gradient checks run in `f64`.

pub mod conv;
pub mod filter;
mod float;
pub mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use float::{matmul, Float};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{uniform_init, NamedTensor, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}
