//! Dense tensors, reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{AttentionMask, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
