//! Volume files, datasets, training, evaluation and ablation for error-map
//! prediction, on top of `aepnet-core`.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod eval;
pub mod rvol;
pub mod trainer;

pub use error::{Error, Result};
