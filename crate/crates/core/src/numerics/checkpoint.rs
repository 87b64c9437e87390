//! Parameter checkpoint file.
//!
//! JSON object:
//!
//! ```text
//! { "format": "ood-checkpoint", "version": 1, "dtype": "f32",
//!   "params": [ { "name": "...", "shape": [r, c], "values": [...] }, ... ] }
//! ```
//!
//! Values are stored in the store's precision with shortest round-trip
//! formatting, so a save/load cycle is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ood-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Checkpoint<F> {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub params: Vec<CheckpointEntry<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CheckpointEntry<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<F>,
}

fn dtype_name<F: Real>() -> &'static str {
    if std::mem::size_of::<F>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl<F: Real> Checkpoint<F> {
    pub fn from_store(store: &ParamStore<F>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dtype: dtype_name::<F>().to_string(),
            params: store
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrite the values of `store`, whose names and shapes must match.
    pub fn restore_into(&self, store: &mut ParamStore<F>) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.dtype != dtype_name::<F>() {
            return Err(Error::InvalidInput(format!(
                "checkpoint dtype {} does not match {}",
                self.dtype,
                dtype_name::<F>()
            )));
        }
        let mut src = ParamStore::new();
        for e in &self.params {
            src.add(e.name.clone(), Tensor::from_vec(&e.shape, e.values.clone())?);
        }
        store.load_values(&src)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
