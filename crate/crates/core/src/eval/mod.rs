//! Metrics, memory-size sweeps, multi-seed aggregation and attention reports.

mod aggregate;
mod attention;
mod metrics;
mod sweep;

use thiserror::Error;

pub use aggregate::{aggregate_runs, aggregate_sweep, Aggregate, RunResult};
pub use attention::{
    attention_reports, dump_attention, read_attention_jsonl, render_attention_html, write_attention_jsonl,
    AttentionEntry, AttentionReport,
};
pub use metrics::{evaluate, ClassMetrics, Metrics};
pub use sweep::{read_sweep_csv, sweep_memory_size, write_sweep_csv, SweepRow, SweepSetup};

use crate::gateway::PredictionRecord;
use crate::plugin::{PluginError, PluginExample, PluginModel, QueryTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("instance {0:?} has no gold label")]
    MissingGold(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("sweep needs at least one entry in {0}")]
    EmptySweep(&'static str),
    #[error("sweep cell M={m}, seed={seed}: {message}")]
    Sweep { m: usize, seed: u64, message: String },
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(String),
}

/// Scores a plugin's argmax predictions against gold labels.
pub fn evaluate_plugin(
    model: &PluginModel,
    examples: &[PluginExample],
    table: Option<&QueryTable>,
) -> Result<Metrics, EvalError> {
    let golds = examples
        .iter()
        .map(|e| e.instance.gold.ok_or_else(|| EvalError::MissingGold(e.instance.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let preds: Vec<_> = model.predict_batch(examples, table)?.into_iter().map(|p| Some(p.label)).collect();
    evaluate(&preds, &golds)
}

/// Scores a predictions file; records without a decoded label count as
/// unparseable.
pub fn evaluate_records(records: &[PredictionRecord]) -> Result<Metrics, EvalError> {
    let golds = records
        .iter()
        .map(|r| r.gold.ok_or_else(|| EvalError::MissingGold(r.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let preds: Vec<_> = records.iter().map(|r| r.prediction).collect();
    evaluate(&preds, &golds)
}
