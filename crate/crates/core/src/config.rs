//! Run configuration read from `key = value` files.
//!
//! ```text
//! # plugin.conf
//! dim = 32
//! memory = 5
//! combine = "concat"
//! lr = 0.001
//! seeds = [1, 2, 3]
//! ```
//!
//! Every key is optional; unknown keys are rejected so typos surface early.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hub::LmConfig;
use crate::knowledge::{ExtractConfig, KnowledgeKind};
use crate::plugin::{Combine, PluginSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {key} {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Plugin embedding width `d`.
    pub dim: usize,
    /// Memory slots per plugin.
    pub memory: usize,
    pub combine: Combine,
    /// Supertag window half-width.
    pub window: usize,
    /// Constituents must be strictly shorter than this.
    pub max_phrase_len: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without dev improvement before training stops.
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub lm_dim: usize,
    pub lm_heads: usize,
    pub lm_layers: usize,
    pub lm_ffn: usize,
    pub lm_max_len: usize,
    pub lm_vocab_size: usize,
    pub concurrency: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dim: 64,
            memory: 5,
            combine: Combine::Concat,
            window: 3,
            max_phrase_len: 10,
            lr: 1e-3,
            epochs: 50,
            patience: 10,
            batch_size: 16,
            seeds: vec![1, 2, 3],
            lm_dim: 32,
            lm_heads: 2,
            lm_layers: 2,
            lm_ffn: 64,
            lm_max_len: 64,
            lm_vocab_size: 2000,
            concurrency: 4,
            max_tokens: 16,
            temperature: 0.0,
            timeout_secs: 60,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            memory: self.memory,
            max_phrase_len: self.max_phrase_len,
            window: self.window,
        }
    }

    pub fn plugin_spec(&self, kind: KnowledgeKind) -> PluginSpec {
        PluginSpec {
            combine: self.combine,
            ..PluginSpec::new(kind, self.dim, self.memory)
        }
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            dim: self.lm_dim,
            heads: self.lm_heads,
            layers: self.lm_layers,
            ffn: self.lm_ffn,
            max_len: self.lm_max_len,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("dim", self.dim),
            ("memory", self.memory),
            ("window", self.window),
            ("max_phrase_len", self.max_phrase_len),
            ("batch_size", self.batch_size),
            ("lm_dim", self.lm_dim),
            ("lm_heads", self.lm_heads),
            ("lm_layers", self.lm_layers),
            ("lm_ffn", self.lm_ffn),
            ("lm_max_len", self.lm_max_len),
            ("lm_vocab_size", self.lm_vocab_size),
            ("concurrency", self.concurrency),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid {
                    key,
                    message: "must be at least 1".into(),
                });
            }
        }
        if self.lm_dim % self.lm_heads != 0 {
            return Err(ConfigError::Invalid {
                key: "lm_heads",
                message: format!("must divide lm_dim ({})", self.lm_dim),
            });
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "lr",
                message: format!("must be a finite non-negative number, got {}", self.lr),
            });
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid {
                key: "seeds",
                message: "must list at least one seed".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn overrides_and_comments() {
        let c = Config::parse("# tiny\ndim = 8\ncombine = \"sum\"\nseeds = [4]\n").unwrap();
        assert_eq!(c.dim, 8);
        assert_eq!(c.combine, Combine::Sum);
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.memory, 5);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::parse("dimm = 8\n").unwrap_err();
        assert!(err.to_string().contains("dimm"), "{err}");
    }

    #[test]
    fn zero_memory_rejected() {
        assert!(matches!(
            Config::parse("memory = 0").unwrap_err(),
            ConfigError::Invalid { key: "memory", .. }
        ));
    }
}
