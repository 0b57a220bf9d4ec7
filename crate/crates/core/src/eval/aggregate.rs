use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sweep::SweepRow;
use super::EvalError;
use crate::knowledge::KnowledgeKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: Vec<RunResult>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Mean taken as an offset from the first value, so identical inputs give
/// back exactly that value.
fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = xs.clone();
    let first = it.next().unwrap_or(0.0);
    let n = xs.count() as f64;
    first + it.map(|x| x - first).sum::<f64>() / n
}

pub fn aggregate_runs(runs: &[RunResult]) -> Result<Aggregate, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    Ok(Aggregate {
        runs: runs.to_vec(),
        mean_accuracy: mean(runs.iter().map(|r| r.accuracy)),
        mean_macro_f1: mean(runs.iter().map(|r| r.macro_f1)),
    })
}

/// Seed-averaged results per `(kind, M)`, in key order.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Result<Vec<(KnowledgeKind, usize, Aggregate)>, EvalError> {
    let mut groups: BTreeMap<(KnowledgeKind, usize), Vec<RunResult>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.kind, r.m)).or_default().push(RunResult {
            seed: r.seed,
            accuracy: r.acc,
            macro_f1: r.macro_f1,
        });
    }
    groups
        .into_iter()
        .map(|((k, m), runs)| Ok((k, m, aggregate_runs(&runs)?)))
        .collect()
}
