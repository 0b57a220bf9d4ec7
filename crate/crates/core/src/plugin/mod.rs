//! Key-value memory plugin.
//!
//! A plugin encodes the sentence and aspect into one query vector `h`, attends
//! over the key embeddings of its knowledge bundle, reads out the weighted sum
//! of value embeddings `o`, and classifies `o` together with `h`:
//!
//! ```text
//! p_m = softmax_m(h . k_m)      o = sum_m p_m v_m      y = softmax(W [o ; h] + b)
//! ```

mod attention;
mod model;
mod train;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TensorError;
use crate::corpus::{AbsaInstance, Polarity};
use crate::knowledge::{KnowledgeBundle, KnowledgeKind};

pub use attention::{memory_attend, AttentionRecord};
pub use model::{pair_examples, Forward, PluginModel, PluginSpec, Prediction, SEP};
pub use train::{fit, grad_check_plugin, plugin_gradients, train_plugin, EpochStats, TrainOptions, TrainReport};
pub use vocab::{Vocab, UNK};

pub(crate) use model::argmax;

#[derive(Debug, Error)]
pub enum PluginError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("instance {0:?} has no gold label")]
    MissingGold(String),
    #[error("instance {0:?} has no knowledge bundle")]
    MissingBundle(String),
    #[error("bundle {id:?} is {found} knowledge but the plugin expects {expected}")]
    KindMismatch {
        id: String,
        expected: KnowledgeKind,
        found: KnowledgeKind,
    },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (first ids: {ids:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        ids: Vec<String>,
    },
    #[error("no precomputed query vector for instance {0:?}")]
    MissingQuery(String),
    #[error("query vector for {id:?} has width {found}, expected {expected}")]
    QueryWidth { id: String, expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// How the memory read-out and the query are combined before classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    /// `[o ; h]`, classifier width `2d`.
    Concat,
    /// `o + h`, classifier width `d`.
    Sum,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Concat => "concat",
            Combine::Sum => "sum",
        })
    }
}

impl FromStr for Combine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(Combine::Concat),
            "sum" => Ok(Combine::Sum),
            other => Err(format!("unknown combine mode {other:?} (expected concat or sum)")),
        }
    }
}

/// One instance with the bundle of the plugin's kind.
#[derive(Clone, Debug, PartialEq)]
pub struct PluginExample {
    pub instance: AbsaInstance,
    pub bundle: KnowledgeBundle,
}

impl PluginExample {
    pub fn gold(&self) -> Result<Polarity, PluginError> {
        self.instance
            .gold
            .ok_or_else(|| PluginError::MissingGold(self.instance.id.clone()))
    }
}

/// Query vectors produced outside this crate, keyed by instance id. When
/// supplied they replace the built-in encoder.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryTable {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct QueryLine {
    id: String,
    vector: Vec<f64>,
}

impl QueryTable {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        QueryTable { vectors }
    }

    /// Reads `{"id": .., "vector": [..]}` lines.
    pub fn read<R: BufRead>(r: R) -> Result<Self, PluginError> {
        let mut vectors = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| PluginError::Checkpoint(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let q: QueryLine = serde_json::from_str(&line)
                .map_err(|e| PluginError::Checkpoint(format!("query line {}: {e}", i + 1)))?;
            vectors.insert(q.id, q.vector);
        }
        Ok(QueryTable { vectors })
    }

    pub fn vector(&self, id: &str, width: usize) -> Result<&[f64], PluginError> {
        let v = self
            .vectors
            .get(id)
            .ok_or_else(|| PluginError::MissingQuery(id.to_string()))?;
        if v.len() != width {
            return Err(PluginError::QueryWidth {
                id: id.to_string(),
                expected: width,
                found: v.len(),
            });
        }
        Ok(v)
    }
}
