//! Counterfactual phantom editing with inference-time attention regulation.
//!
//! The stack, bottom to top:
//!
//! - [`tensor`] / [`tape`]: dense tensors with reverse-mode differentiation.
//! - [`phantom`]: procedural anatomy phantoms with exact organ masks and
//!   lesion ground truth.
//! - [`model`]: a small attention-only noise-prediction network with hook
//!   points for attention interception.
//! - [`schedule`] / [`sampler`]: noise schedule, DDIM stepping with
//!   classifier-free guidance, and the counterfactual editing procedure.
//! - [`regulate`]: mask-gated self-attention, prior-driven cross-attention
//!   reweighting, the concentration energy, and latent correction.
//! - [`metrics`]: SSIM, region-change statistics, edit-success decisions, and
//!   the ablation harness.
//! - [`io`] / [`config`]: PGM / TNSR / JSON formats and the run configuration.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; `f32` is the
//! runtime element type and `f64` backs gradient checks.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod regulate;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tape::{backward, Gradients, Tape};
pub use tensor::Tensor;

/// Runtime element type.
pub type Real = f32;
/// Tensor over the runtime element type.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by gradient checks.
pub type Tensor64 = Tensor<f64>;
