//! Hub MLP and fusion into a frozen micro language model.
//!
//! Plugin read-outs `o_1 .. o_U` are concatenated and mapped by the hub to
//! `h^P` in the LM embedding space. `h^P` is appended to the prompt embeddings
//! as one extra position, the LM runs causally, and polarity logits are read
//! at that last position. Only plugin and hub parameters are ever updated.

mod fused;
mod lm;
mod mlp;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::plugin::PluginError;

pub use fused::{
    fuse_and_forward, grad_check_fused, hub_gradients, train_strategy1, FusedExample, FusedModel, FusedReport,
};
pub use lm::{lm_vocab, LmConfig, MicroLm};
pub use mlp::HubModel;

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error("hub expects input width {expected}, got {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("between 1 and 3 plugins are supported, got {0}")]
    PluginCount(usize),
    #[error("instance {id:?} has {found} bundles, expected one per plugin ({expected})")]
    BundleCount { id: String, expected: usize, found: usize },
    #[error("LM parameters changed during training (hash {before} -> {after})")]
    LmMutated { before: String, after: String },
    #[error("LM has trainable parameters; it must be frozen")]
    LmNotFrozen,
    #[error("model was trained against LM {expected} but this LM hashes to {found}")]
    LmHashMismatch { expected: String, found: String },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("instance {0:?} has no gold label")]
    MissingGold(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("LM configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
