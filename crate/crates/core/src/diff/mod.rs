//! Dense tensors, reverse-mode differentiation, gradient checking and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use params::{BoundParams, ParamStore};
pub use tape::{Activation, Grads, Tape, Var};
pub use tensor::{broadcast_shapes, numel, strides, Tensor};
