//! Checkpoints: a TOML header naming every tensor and its shape, plus one
//! little-endian `f64` payload holding the parameters followed by the Adam
//! first and second moments, all in header order.

use std::fs;
use std::path::Path;

use aepnet_core::model::AepNet;
use aepnet_core::optim::AdamState;
use aepnet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{read_toml, write_toml, Error, Result};

pub const MAGIC: &str = "AEPCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHeader {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    /// Completed iterations.
    pub iteration: usize,
    pub payload: String,
    pub config: TrainConfig,
    pub adam: AdamHeader,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: usize,
    pub model: AepNet,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(path, "checkpoint path has no file name"))?;
        let payload = format!("{stem}.bin");
        let header = Header {
            format: MAGIC.into(),
            version: VERSION,
            iteration: self.iteration,
            payload: payload.clone(),
            config: self.config.clone(),
            adam: AdamHeader {
                step: self.adam.step,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                eps: self.adam.eps,
            },
            tensors: self
                .model
                .params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut bytes = Vec::with_capacity(3 * 8 * self.model.parameter_count());
        for t in self.model.params.values().iter().chain(&self.adam.m).chain(&self.adam.v) {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let ppath = path.with_file_name(&payload);
        fs::write(&ppath, bytes).map_err(Error::io(&ppath))?;
        write_toml(path, &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: Header = read_toml(path)?;
        if header.format != MAGIC || header.version != VERSION {
            return Err(Error::format(path, format!("not a version {VERSION} {MAGIC} checkpoint")));
        }
        header.config.validate().map_err(|e| Error::format(path, e.to_string()))?;
        // Structure comes from the config; values come from the payload.
        let mut model = AepNet::build(&header.config.model, header.config.variant, header.config.seed)?;
        if model.params.len() != header.tensors.len() {
            return Err(Error::format(
                path,
                format!("{} tensors listed, the configured model has {}", header.tensors.len(), model.params.len()),
            ));
        }
        for ((_, name, t), entry) in model.params.iter().zip(&header.tensors) {
            if name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(Error::format(
                    path,
                    format!("tensor {} {:?} does not match model tensor {name} {:?}", entry.name, entry.shape, t.shape()),
                ));
            }
        }
        let ppath = path.with_file_name(&header.payload);
        let bytes = fs::read(&ppath).map_err(Error::io(&ppath))?;
        let n = model.parameter_count();
        if bytes.len() != 3 * 8 * n {
            return Err(Error::format(&ppath, format!("payload has {} bytes, expected {}", bytes.len(), 3 * 8 * n)));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut fill = |shape: &[usize]| -> Result<Tensor> {
            let len = shape.iter().product();
            Ok(Tensor::new(shape.to_vec(), values.by_ref().take(len).collect())?)
        };
        for t in model.params.values_mut() {
            *t = fill(&t.shape().to_vec())?;
        }
        let shapes: Vec<Vec<usize>> = header.tensors.iter().map(|e| e.shape.clone()).collect();
        let m = shapes.iter().map(|s| fill(s)).collect::<Result<Vec<_>>>()?;
        let v = shapes.iter().map(|s| fill(s)).collect::<Result<Vec<_>>>()?;
        let adam = AdamState {
            beta1: header.adam.beta1,
            beta2: header.adam.beta2,
            eps: header.adam.eps,
            step: header.adam.step,
            m,
            v,
        };
        Ok(Self {
            config: header.config,
            iteration: header.iteration,
            model,
            adam,
        })
    }

    /// Loads a checkpoint that must have been written under `config`.
    pub fn load_matching(path: &Path, config: &TrainConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.config != config {
            return Err(Error::format(path, "checkpoint was written with a different training configuration"));
        }
        Ok(ckpt)
    }
}
