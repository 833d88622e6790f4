//! CPU tensors with a tape-free dynamic autodiff graph.
//!
//! [`Tensor`] is plain shared data (cheap to clone, `Send + Sync`). [`Var`] wraps a
//! tensor as a graph node; operations on `Var`s record backward rules that are
//! themselves built from `Var` operations, so gradients can be differentiated again.

pub mod conv;
mod element;
mod ops;
mod tensor;
mod var;

pub use conv::{conv_out_dim, ConvGeom};
pub use element::{DType, Element};
pub use ops::{broadcast_shape, conv_input_grad, conv_weight_grad};
pub use tensor::{numel, BinaryOp, Storage, Tensor, UnaryOp};
pub use var::{backward, grad, is_grad_enabled, no_grad, with_grad_mode, Gradients, Var};
