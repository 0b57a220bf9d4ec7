//! Versioned JSON checkpoints.
//!
//! ```text
//! {"magic":"SYNPLUG-CKPT","version":1,"header":{..},"params":[
//!   {"name":"..","shape":[r,c],"trainable":true,"data":"<base64 of LE f64>"}, ..]}
//! ```

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

pub const MAGIC: &str = "SYNPLUG-CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: String,
}

impl ParamRecord {
    pub fn encode(name: &str, value: &Tensor, trainable: bool) -> Self {
        let mut bytes = Vec::with_capacity(value.len() * 8);
        for v in value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ParamRecord {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            trainable,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<(Tensor, bool), TensorError> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(TensorError::Checkpoint(format!(
                "{}: payload of {} bytes is not a multiple of 8",
                self.name,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((Tensor::new(self.shape.clone(), data)?, self.trainable))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub header: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn new(header: serde_json::Value, params: Vec<ParamRecord>) -> Self {
        Checkpoint {
            magic: MAGIC.to_string(),
            version: VERSION,
            header,
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("checkpoint serialises");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let ckpt: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if ckpt.magic != MAGIC {
            return Err(TensorError::Checkpoint(format!(
                "bad magic {:?}, expected {MAGIC:?}",
                ckpt.magic
            )));
        }
        if ckpt.version != VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path)
            .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Header field as a string, for loaders.
    pub fn header_str(&self, key: &str) -> Result<&str, TensorError> {
        self.header
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| TensorError::Checkpoint(format!("header missing string field {key:?}")))
    }

    pub fn header_usize(&self, key: &str) -> Result<usize, TensorError> {
        self.header
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| TensorError::Checkpoint(format!("header missing integer field {key:?}")))
    }
}
