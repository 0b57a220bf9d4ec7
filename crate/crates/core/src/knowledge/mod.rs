//! Per-instance key/value knowledge bundles.
//!
//! Every extractor turns one [`ParsedInstance`](crate::ParsedInstance) into an
//! ordered list of `(key symbol, value symbol)` entries of a single kind. The
//! plugin later embeds keys and values through two separate tables.

mod constituent;
mod dep;
mod supertag;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AspectSpan, ParsedInstance};

pub use constituent::{extract_constituent, DEFAULT_MAX_PHRASE_LEN};
pub use dep::{build_frequency_table, extract_dep_pairs, select_dep_bundle, DepPair, FrequencyTable};
pub use supertag::{extract_supertag_window, supertag_window_indices, DEFAULT_WINDOW};

/// Default number of memory slots per plugin.
pub const DEFAULT_MEMORY: usize = 5;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("instance {id:?} has no {kind} annotation")]
    MissingAnnotation { id: String, kind: KnowledgeKind },
    #[error("frequency table needs at least one training instance")]
    EmptyCorpus,
    #[error("memory size must be at least 1")]
    ZeroCapacity,
    #[error("bundle line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    Dep,
    Const,
    Ccg,
}

impl KnowledgeKind {
    pub const ALL: [KnowledgeKind; 3] = [KnowledgeKind::Dep, KnowledgeKind::Const, KnowledgeKind::Ccg];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeKind::Dep => "dep",
            KnowledgeKind::Const => "const",
            KnowledgeKind::Ccg => "ccg",
        }
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dep" => Ok(KnowledgeKind::Dep),
            "const" => Ok(KnowledgeKind::Const),
            "ccg" => Ok(KnowledgeKind::Ccg),
            other => Err(format!("unknown knowledge kind {other:?} (expected dep, const or ccg)")),
        }
    }
}

/// Ordered `(key, value)` symbols for one instance, at most `capacity` long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeBundle {
    pub id: String,
    pub kind: KnowledgeKind,
    pub entries: Vec<(String, String)>,
    pub capacity: usize,
    /// Set when the constituent extractor found no qualifying phrase.
    pub fallback: bool,
}

impl KnowledgeBundle {
    pub fn new(id: impl Into<String>, kind: KnowledgeKind, entries: Vec<(String, String)>, capacity: usize) -> Self {
        debug_assert!(entries.len() <= capacity);
        KnowledgeBundle {
            id: id.into(),
            kind,
            entries,
            capacity,
            fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, v)| v.as_str())
    }

    /// Keeps only the first `m` entries.
    pub fn truncated(&self, m: usize) -> KnowledgeBundle {
        let mut b = self.clone();
        b.entries.truncate(m);
        b.capacity = m.min(b.capacity);
        b
    }
}

#[derive(Serialize, Deserialize)]
struct BundleRecord {
    id: String,
    kind: KnowledgeKind,
    keys: Vec<String>,
    values: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    fallback: bool,
}

pub fn write_bundles<W: Write>(mut w: W, bundles: &[KnowledgeBundle]) -> std::io::Result<()> {
    for b in bundles {
        let rec = BundleRecord {
            id: b.id.clone(),
            kind: b.kind,
            keys: b.keys().map(str::to_string).collect(),
            values: b.values().map(str::to_string).collect(),
            fallback: b.fallback,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_bundles<R: BufRead>(r: R) -> Result<Vec<KnowledgeBundle>, ExtractError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BundleRecord = serde_json::from_str(&line).map_err(|e| ExtractError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.keys.len() != rec.values.len() {
            return Err(ExtractError::Malformed {
                line: i + 1,
                message: format!("{} keys but {} values", rec.keys.len(), rec.values.len()),
            });
        }
        let entries: Vec<(String, String)> = rec.keys.into_iter().zip(rec.values).collect();
        let capacity = entries.len().max(1);
        out.push(KnowledgeBundle {
            id: rec.id,
            kind: rec.kind,
            entries,
            capacity,
            fallback: rec.fallback,
        });
    }
    Ok(out)
}

/// Extraction settings shared by the three kinds.
#[derive(Clone, Debug)]
pub struct ExtractConfig {
    pub memory: usize,
    pub max_phrase_len: usize,
    pub window: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            memory: DEFAULT_MEMORY,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Runs the extractor for `kind`. `freq` is required for dependency bundles.
pub fn extract_bundle(
    kind: KnowledgeKind,
    pi: &ParsedInstance,
    freq: Option<&FrequencyTable>,
    cfg: &ExtractConfig,
) -> Result<KnowledgeBundle, ExtractError> {
    if cfg.memory == 0 {
        return Err(ExtractError::ZeroCapacity);
    }
    match kind {
        KnowledgeKind::Dep => {
            let pairs = extract_dep_pairs(pi)?;
            let empty = FrequencyTable::default();
            select_dep_bundle(pi.id(), &pairs, freq.unwrap_or(&empty), cfg.memory)
        }
        KnowledgeKind::Const => extract_constituent(pi, cfg.max_phrase_len, Some(cfg.memory)),
        KnowledgeKind::Ccg => extract_supertag_window(pi, cfg.window, Some(cfg.memory)),
    }
}

/// Extracts bundles for a whole split. Dependency frequencies come from `train`.
pub fn extract_split(
    kind: KnowledgeKind,
    train: &[ParsedInstance],
    split: &[ParsedInstance],
    cfg: &ExtractConfig,
) -> Result<Vec<KnowledgeBundle>, ExtractError> {
    use rayon::prelude::*;
    let freq = match kind {
        KnowledgeKind::Dep => Some(build_frequency_table(train)?),
        _ => None,
    };
    split
        .par_iter()
        .map(|pi| extract_bundle(kind, pi, freq.as_ref(), cfg))
        .collect()
}

/// Picks at most `m` of the sorted `indices`, nearest to the aspect first
/// (left before right on equal distance), and returns them in sentence order.
pub(crate) fn nearest_to_aspect(indices: &[usize], aspect: AspectSpan, m: usize) -> Vec<usize> {
    let dist = |i: usize| {
        if aspect.contains(i) {
            0
        } else if i < aspect.start {
            aspect.start - i
        } else {
            i + 1 - aspect.end
        }
    };
    let mut ranked: Vec<usize> = indices.to_vec();
    ranked.sort_by_key(|&i| (dist(i), i));
    ranked.truncate(m);
    ranked.sort_unstable();
    ranked
}
