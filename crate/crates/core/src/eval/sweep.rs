use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_plugin, EvalError};
use crate::corpus::ParsedInstance;
use crate::knowledge::{extract_split, ExtractConfig, KnowledgeKind};
use crate::plugin::{pair_examples, train_plugin, PluginSpec, TrainOptions};

/// One `(M, seed)` cell. Serialises as `kind,M,seed,acc,macro_f1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: KnowledgeKind,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub acc: f64,
    pub macro_f1: f64,
}

/// Everything a sweep cell needs except `M` and the seed.
#[derive(Clone, Debug)]
pub struct SweepSetup<'a> {
    pub kind: KnowledgeKind,
    pub train: &'a [ParsedInstance],
    pub dev: &'a [ParsedInstance],
    pub spec: PluginSpec,
    pub extract: ExtractConfig,
    pub opts: TrainOptions,
}

fn cell(setup: &SweepSetup<'_>, m: usize, seed: u64) -> Result<SweepRow, String> {
    let extract = ExtractConfig {
        memory: m,
        ..setup.extract.clone()
    };
    let bundles = |split: &[ParsedInstance]| {
        extract_split(setup.kind, setup.train, split, &extract).map_err(|e| e.to_string())
    };
    let plain = |split: &[ParsedInstance]| split.iter().map(|p| p.instance.clone()).collect::<Vec<_>>();
    let train = pair_examples(&plain(setup.train), &bundles(setup.train)?).map_err(|e| e.to_string())?;
    let dev = pair_examples(&plain(setup.dev), &bundles(setup.dev)?).map_err(|e| e.to_string())?;
    let spec = PluginSpec {
        kind: setup.kind,
        memory: m,
        ..setup.spec.clone()
    };
    let opts = TrainOptions {
        seed,
        ..setup.opts.clone()
    };
    let (model, _) = train_plugin(spec, &train, &dev, &opts, None).map_err(|e| e.to_string())?;
    let metrics = evaluate_plugin(&model, &dev, None).map_err(|e| e.to_string())?;
    Ok(SweepRow {
        kind: setup.kind,
        m,
        seed,
        acc: metrics.accuracy,
        macro_f1: metrics.macro_f1,
    })
}

/// Trains and scores one plugin per `(M, seed)`, re-extracting bundles at
/// each `M`. Cells run in parallel; rows come back ordered by `M`, then seed,
/// as given.
pub fn sweep_memory_size(setup: &SweepSetup<'_>, ms: &[usize], seeds: &[u64]) -> Result<Vec<SweepRow>, EvalError> {
    if ms.is_empty() {
        return Err(EvalError::EmptySweep("memory sizes"));
    }
    if seeds.is_empty() {
        return Err(EvalError::EmptySweep("seeds"));
    }
    if let Some(&m) = ms.iter().find(|&&m| m == 0) {
        return Err(EvalError::Sweep {
            m,
            seed: seeds[0],
            message: "memory size must be at least 1".into(),
        });
    }
    if setup.dev.is_empty() {
        return Err(EvalError::EmptySweep("dev split"));
    }
    let cells: Vec<(usize, u64)> = ms.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    cells
        .par_iter()
        .map(|&(m, seed)| cell(setup, m, seed).map_err(|message| EvalError::Sweep { m, seed, message }))
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| EvalError::Io(e.to_string()))
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>, EvalError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(EvalError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_round_trip() {
        let rows = vec![
            SweepRow {
                kind: KnowledgeKind::Dep,
                m: 5,
                seed: 1,
                acc: 0.1 + 0.2,
                macro_f1: 1.0 / 3.0,
            },
            SweepRow {
                kind: KnowledgeKind::Ccg,
                m: 1,
                seed: 3,
                acc: 1.0,
                macro_f1: 0.0,
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,M,seed,acc,macro_f1\n"), "{text}");
        assert_eq!(read_sweep_csv(&buf[..]).unwrap(), rows);
    }
}
