//! Surrogate models for stamp-forming strain fields.
//!
//! A scalar design point (die fillet radii, binder force, blank thickness) is
//! rasterized into a 3-channel image; a Res-SE-U-Net predicts the resulting
//! 50x50 plastic-strain field, and a 6-hidden-layer MLP predicts its maximum
//! as a scalar baseline. Everything runs on a small f64 tensor stack with
//! reverse-mode autodiff, built for deterministic desk-scale CPU runs.

pub mod conv;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod linear_prior;
mod gemm;
pub mod nn;
pub mod optim;
mod par;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use conv::ConvGeometry;
pub use error::{Error, Result};
pub use par::set_worker_override;
pub use tape::{Activation, BatchNormState, BnMode, Tape, Var};
pub use tensor::Tensor;
