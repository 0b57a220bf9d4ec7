//! Tensors, a reverse-mode tape, parameters, Adam and checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, ParamRecord};
pub use params::{
    scaled_uniform, seeded_rng, uniform, Bound, ParamId, ParamStore, Parameter, SeededRng,
    EMBEDDING_INIT,
};
pub use tape::{softmax_slice, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} invalid for a {ndim}-d tensor")]
    BadAxis {
        op: &'static str,
        axis: usize,
        ndim: usize,
    },
    #[error("slice {start}..{end} out of bounds for shape {shape:?}")]
    BadSlice {
        shape: Vec<usize>,
        start: usize,
        end: usize,
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
