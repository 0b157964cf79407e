//! Minimal dense-tensor engine used by the claim-verification model.
//!
//! Values are row-major `f64` arrays. Differentiable computations are
//! recorded on a [`Tape`] during the forward pass and replayed once in
//! reverse by [`Tape::backward`]. Trainable values live in a [`ParamSet`]
//! and are updated with [`AdamState`].

mod adam;
mod error;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use params::{ParamGrads, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Floor added inside every logarithm and denominator.
pub const EPS: f64 = 1e-12;
