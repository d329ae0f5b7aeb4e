//! Error-map prediction for segmentation quality assessment.
//!
//! The crate is `no_std` (with `alloc`) and holds every piece of the pipeline
//! that is pure computation: a dense `f64` tensor with a reverse-mode
//! differentiation graph, the 3D network primitives built on it, the
//! dual-branch error-prediction network with its context-encoding head, the
//! training losses, synthetic phantom data, the Adam optimizer with a poly
//! learning-rate schedule, and the quality-assessment metrics.
//!
//! File formats, the training loop and the command-line tools live in the
//! companion `aepnet` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod boundary;
pub mod data;
mod error;
pub mod losses;
mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, ParamId, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
