//! Flow-token spatio-temporal forecasting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not care.

pub mod data;
pub mod diff;
pub mod error;
pub mod flow;
pub mod scalar;
pub mod stack;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Params32 = diff::ParamStore<f32>;
pub type Params64 = diff::ParamStore<f64>;
pub type FlowNet32 = stack::FlowNet<f32>;
pub type FlowNet64 = stack::FlowNet<f64>;
