//! Memory-based syntactic knowledge plugins for aspect-based sentiment analysis.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`] reads ABSA instances and their dependency, constituency and
//!   CCG supertag annotations;
//! - [`knowledge`] turns an annotated instance into key/value symbol bundles;
//! - [`plugin`] is the key-value memory plugin and its standalone training;
//! - [`hub`] maps plugin outputs into a frozen micro language model and trains
//!   plugin + hub through it;
//! - [`gateway`] fills prompt templates with plugin predictions and queries an
//!   OpenAI-compatible chat endpoint;
//! - [`eval`] holds metrics, memory-size sweeps and attention reports.
//!
//! [`autodiff`] is the small tensor/tape engine every trainable piece runs on.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod hub;
pub mod knowledge;
pub mod plugin;
pub mod synthetic;

pub use corpus::{AbsaInstance, AspectSpan, ParsedInstance, Polarity};
pub use knowledge::{KnowledgeBundle, KnowledgeKind};
