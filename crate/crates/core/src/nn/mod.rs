//! Dense tensors, reverse-mode autodiff, layers, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use graph::{bce, sigmoid, Gradients, Graph, Var, BCE_EPS};
pub use layers::{Linear, Mlp};
pub use params::{uniform, xavier_uniform, ParamId, ParamStore};
pub use tensor::Tensor;
