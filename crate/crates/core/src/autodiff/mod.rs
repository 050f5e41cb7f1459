//! Reverse-mode differentiation over the handful of primitives the shape
//! networks need. Everything runs in `f64` and is deterministic.

pub mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{euler_matrix, KlForm, NodeId, Tape, TapeGradients};
pub use tensor::Tensor2;

pub(crate) use tape::kl_value;
