//! First- and second-order dependency pairs around the aspect term.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExtractError, KnowledgeBundle, KnowledgeKind};
use crate::corpus::ParsedInstance;

/// Context word `word` at `position`, reached from an aspect word over
/// `order` arcs, where `rel` labels the last arc.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepPair {
    pub word: String,
    pub rel: String,
    pub order: u8,
    pub position: usize,
}

impl DepPair {
    /// Value symbol combining word and relation, e.g. `poor-nsubj`.
    pub fn value_symbol(&self) -> String {
        format!("{}-{}", self.word, self.rel)
    }
}

/// Extracts every `(w, r)` one or two arcs away from any aspect word.
///
/// Arcs are followed in either direction, so second-order paths cover
/// head-of-head, dependent-of-dependent and sibling configurations. Context
/// words inside the aspect span are dropped. When the same word occurrence is
/// reached with the same relation more than once, the lowest order is kept.
/// Output is ordered by `(order, position, rel)`.
pub fn extract_dep_pairs(pi: &ParsedInstance) -> Result<Vec<DepPair>, ExtractError> {
    let tree = pi.dep.as_ref().ok_or_else(|| ExtractError::MissingAnnotation {
        id: pi.id().to_string(),
        kind: KnowledgeKind::Dep,
    })?;
    let aspect = pi.instance.aspect;
    let n = tree.len();
    let mut adj: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    for (dependent, head, rel) in tree.edges() {
        adj[dependent].push((head, rel));
        adj[head].push((dependent, rel));
    }

    let mut found: BTreeMap<(usize, &str), u8> = BTreeMap::new();
    let mut record = |w: usize, rel, order: u8| {
        if !aspect.contains(w) {
            let slot = found.entry((w, rel)).or_insert(order);
            *slot = (*slot).min(order);
        }
    };
    for a in aspect.start..aspect.end {
        for &(mid, r1) in &adj[a] {
            record(mid, r1, 1);
            for &(w, r2) in &adj[mid] {
                if w != a {
                    record(w, r2, 2);
                }
            }
        }
    }

    let mut pairs: Vec<DepPair> = found
        .into_iter()
        .map(|((position, rel), order)| DepPair {
            word: pi.instance.tokens[position].clone(),
            rel: rel.to_string(),
            order,
            position,
        })
        .collect();
    pairs.sort_by(|a, b| (a.order, a.position, &a.rel).cmp(&(b.order, b.position, &b.rel)));
    Ok(pairs)
}

/// Training-split counts of extracted `(word, rel)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<(String, String), u64>,
}

impl FrequencyTable {
    pub fn count(&self, word: &str, rel: &str) -> u64 {
        self.counts
            .get(&(word.to_string(), rel.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &u64)> {
        self.counts.iter()
    }

    fn merge(mut self, other: FrequencyTable) -> FrequencyTable {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self
    }
}

pub fn build_frequency_table(train: &[ParsedInstance]) -> Result<FrequencyTable, ExtractError> {
    use rayon::prelude::*;
    if train.is_empty() {
        return Err(ExtractError::EmptyCorpus);
    }
    train
        .par_iter()
        .map(|pi| {
            let mut t = FrequencyTable::default();
            for p in extract_dep_pairs(pi)? {
                *t.counts.entry((p.word, p.rel)).or_insert(0) += 1;
            }
            Ok(t)
        })
        .try_reduce(FrequencyTable::default, |a, b| Ok(a.merge(b)))
}

/// Keeps the `memory` most frequent pairs. Ties go to lower order, then
/// earlier sentence position, then relation name.
pub fn select_dep_bundle(
    id: &str,
    pairs: &[DepPair],
    freq: &FrequencyTable,
    memory: usize,
) -> Result<KnowledgeBundle, ExtractError> {
    if memory == 0 {
        return Err(ExtractError::ZeroCapacity);
    }
    let mut ranked: Vec<(u64, &DepPair)> = pairs.iter().map(|p| (freq.count(&p.word, &p.rel), p)).collect();
    ranked.sort_by(|(fa, a), (fb, b)| {
        (Reverse(*fa), a.order, a.position, &a.rel).cmp(&(Reverse(*fb), b.order, b.position, &b.rel))
    });
    let entries = ranked
        .into_iter()
        .take(memory)
        .map(|(_, p)| (p.word.clone(), p.value_symbol()))
        .collect();
    Ok(KnowledgeBundle::new(id, KnowledgeKind::Dep, entries, memory))
}
