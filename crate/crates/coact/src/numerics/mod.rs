//! Dense-tensor arithmetic, the gradient tape, Adam, and the
//! finite-difference oracle. Everything downstream builds on this.

pub mod adam;
pub mod fd;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use fd::{finite_difference_grad, max_relative_error, DEFAULT_EPS};
pub use tape::{sigmoid, Activation, GradStore, NodeId, ParamId, ParamKey, Tape};
pub use tensor::Tensor;
