//! Dense tensors, reverse-mode differentiation and gradient checking.

mod gradcheck;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{BoundParams, ParamStore};
pub use tape::{Extreme, GradientMap, NodeId, Segments, Tape};
pub use tensor::Tensor;
