use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{param_count, NetworkError, NetworkParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("inconsistent checkpoint: flat has {got} entries, layer dims {dims:?} require {expected}")]
    Inconsistent { dims: Vec<usize>, expected: usize, got: usize },
    #[error("invalid checkpoint parameters: {0}")]
    Params(#[from] NetworkError),
}

/// Provenance of a saved network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// `"shm"` or `"wave"`.
    pub problem_kind: String,
    /// omega_0 for the oscillator, c for the wave equation.
    pub problem_constant: f64,
    pub optimizer: String,
    pub epoch: usize,
    pub final_loss: f64,
    pub seed: u64,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    flat: Vec<f64>,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, CheckpointError> {
        if let Some(i) = self.params.flat().iter().position(|v| !v.is_finite()) {
            return Err(NetworkError::NonFinite(i).into());
        }
        if !self.meta.final_loss.is_finite() || !self.meta.problem_constant.is_finite() {
            return Err(CheckpointError::Corrupt("non-finite metadata".into()));
        }
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            layer_dims: self.params.layer_dims().to_vec(),
            flat: self.params.flat().to_vec(),
            meta: self.meta.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Corrupt("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::Version { found: version });
        }
        let meta_version = value
            .pointer("/meta/format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(version);
        if meta_version != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::Version { found: meta_version });
        }
        let file: CheckpointFile = serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let expected = param_count(&file.layer_dims);
        if file.flat.len() != expected {
            return Err(CheckpointError::Inconsistent {
                dims: file.layer_dims,
                expected,
                got: file.flat.len(),
            });
        }
        let params = NetworkParams::new(file.layer_dims, file.flat)?;
        Ok(Self { params, meta: file.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let text = self.to_json()?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
