//! Training configuration, read from TOML.
//!
//! ```toml
//! lr0 = 1e-3
//! poly_power = 0.9
//! max_iter = 2000
//! batch_size = 1
//! flip_axes = [0, 2]
//! seed = 0
//! checkpoint_every = 500
//! variant = "full"
//!
//! [loss]
//! alpha = 0.3
//! beta = 0.3
//! gamma = 0.6
//!
//! [model]
//! num_classes = 4
//! depth = 3
//! base_channels = 8
//! gn_groups = 4
//! ceu_hidden = 32
//! crop = [16, 16, 16]
//! ```

use std::path::Path;

use aepnet_core::losses::LossWeights;
use aepnet_core::model::{AepNetConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{read_toml, write_toml, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub poly_power: f64,
    pub max_iter: usize,
    pub batch_size: usize,
    /// Axes mirrored at random (0 = x, 1 = y, 2 = z).
    pub flip_axes: Vec<usize>,
    /// Master seed for initialization, sampling, cropping and flipping.
    pub seed: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub variant: Variant,
    pub loss: LossWeights,
    pub model: AepNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            poly_power: 0.9,
            max_iter: 2000,
            batch_size: 1,
            flip_axes: vec![0, 2],
            seed: 0,
            checkpoint_every: 500,
            variant: Variant::Full,
            loss: LossWeights::default(),
            model: AepNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.poly_power >= 0.0) {
            return Err(Error::Invalid(format!("poly_power must be non-negative, got {}", self.poly_power)));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if let Some(a) = self.flip_axes.iter().find(|&&a| a > 2) {
            return Err(Error::Invalid(format!("flip axis {a} is not one of 0, 1, 2")));
        }
        self.loss.validate()?;
        self.model.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: TrainConfig = read_toml(path)?;
        c.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self)
    }
}
