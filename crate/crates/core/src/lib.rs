//! Set-dependent aggregation models for discrete choice prediction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod scalar;
pub mod training;
pub mod triplebasis;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor};
pub use scalar::Scalar;

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type DatasetF64 = data::Dataset<f64>;
pub type DatasetF32 = data::Dataset<f32>;
pub type ModelF64 = models::Model<f64>;
pub type ModelF32 = models::Model<f32>;
