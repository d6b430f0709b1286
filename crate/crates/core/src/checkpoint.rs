//! Versioned JSON container for trained weights, their config and loss history.

use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use incogni_nn::{NamedTensor, ParamStore};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "incognipipe-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EncodedTensor {
    name: String,
    shape: Vec<usize>,
    /// Little-endian `f32`, base64.
    data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    stage: String,
    config: serde_json::Value,
    history: BTreeMap<String, Vec<f64>>,
    tensors: Vec<EncodedTensor>,
}

/// A stage tag, its config, loss curves and a flat list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub config: serde_json::Value,
    pub history: BTreeMap<String, Vec<f64>>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(stage: &str, config: &C, store: &ParamStore<f32>) -> Result<Self> {
        Ok(Self {
            stage: stage.to_string(),
            config: serde_json::to_value(config)?,
            history: BTreeMap::new(),
            tensors: store.to_named(),
        })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Checkpoint(format!("stage {}: bad config: {e}", self.stage)))
    }

    pub fn expect_stage(&self, stage: &str) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Checkpoint(format!(
                "expected a {stage} checkpoint, found {}",
                self.stage
            )));
        }
        Ok(())
    }

    /// Tensors whose names start with `prefix.`, with the prefix removed.
    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<NamedTensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(&p).map(|n| NamedTensor {
                    name: n.to_string(),
                    ..t.clone()
                })
            })
            .collect()
    }

    pub fn add_tensors(&mut self, prefix: &str, store: &ParamStore<f32>) {
        self.tensors
            .extend(store.to_named().into_iter().map(|t| NamedTensor {
                name: format!("{prefix}.{}", t.name),
                ..t
            }));
    }

    pub fn to_json(&self) -> Result<String> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let c = Container {
            format: FORMAT.into(),
            version: VERSION,
            stage: self.stage.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| EncodedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: b64.encode(
                        t.data
                            .iter()
                            .flat_map(|v| v.to_le_bytes())
                            .collect::<Vec<u8>>(),
                    ),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&c)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Container =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown container format {:?}",
                c.format
            )));
        }
        if c.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                c.version
            )));
        }
        let b64 = base64::engine::general_purpose::STANDARD;
        let tensors = c
            .tensors
            .into_iter()
            .map(|t| {
                let bytes = b64
                    .decode(&t.data)
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", t.name)))?;
                let n: usize = t.shape.iter().product();
                if bytes.len() != 4 * n {
                    return Err(Error::Checkpoint(format!(
                        "{}: {} bytes for shape {:?}",
                        t.name,
                        bytes.len(),
                        t.shape
                    )));
                }
                let data = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                Ok(NamedTensor {
                    name: t.name,
                    shape: t.shape,
                    data,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            stage: c.stage,
            config: c.config,
            history: c.history,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
