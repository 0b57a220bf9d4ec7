use std::cmp::Reverse;

use super::{nearest_to_aspect, ExtractError, KnowledgeBundle, KnowledgeKind};
use crate::corpus::{ConstNode, ParsedInstance};

/// Phrases must be strictly shorter than this many words.
pub const DEFAULT_MAX_PHRASE_LEN: usize = 10;

/// Longest phrase node covering the aspect with fewer than `max_len` words.
///
/// Ties go to the shallower node, then the leftmost. Keys are the phrase's
/// words and values are `word-LABEL`. Without a qualifying phrase the aspect
/// words are used with the label of the smallest phrase covering them, and
/// the bundle is flagged as a fallback. With `memory` set, the words closest
/// to the aspect are kept.
pub fn extract_constituent(
    pi: &ParsedInstance,
    max_len: usize,
    memory: Option<usize>,
) -> Result<KnowledgeBundle, ExtractError> {
    let tree = pi.constituency.as_ref().ok_or_else(|| ExtractError::MissingAnnotation {
        id: pi.id().to_string(),
        kind: KnowledgeKind::Const,
    })?;
    if memory == Some(0) {
        return Err(ExtractError::ZeroCapacity);
    }
    let aspect = pi.instance.aspect;
    let nodes = tree.nodes();
    let covering = || {
        nodes
            .iter()
            .filter(|(_, n)| !n.is_preterminal() && n.start <= aspect.start && aspect.end <= n.end)
    };
    let chosen: Option<&(usize, &ConstNode)> = covering()
        .filter(|(_, n)| n.len() < max_len)
        .max_by_key(|(depth, n)| (n.len(), Reverse(*depth), Reverse(n.start)));

    let (indices, label, fallback): (Vec<usize>, &str, bool) = match chosen {
        Some((_, node)) => ((node.start..node.end).collect(), &node.label, false),
        None => {
            let label = covering()
                .min_by_key(|(depth, n)| (n.len(), Reverse(*depth)))
                .map(|(_, n)| n.label.as_str())
                .unwrap_or(tree.root.label.as_str());
            ((aspect.start..aspect.end).collect(), label, true)
        }
    };

    let (indices, capacity) = match memory {
        Some(m) => (nearest_to_aspect(&indices, aspect, m), m),
        None => {
            let cap = indices.len().max(max_len.saturating_sub(1)).max(1);
            (indices, cap)
        }
    };
    let tokens = &pi.instance.tokens;
    let entries = indices
        .into_iter()
        .map(|i| (tokens[i].clone(), format!("{}-{}", tokens[i], label)))
        .collect();
    let mut bundle = KnowledgeBundle::new(pi.id(), KnowledgeKind::Const, entries, capacity);
    bundle.fallback = fallback;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{bind, parse_bracketed, AbsaInstance, AspectSpan};

    fn parsed(tree: &str, start: usize, end: usize) -> ParsedInstance {
        let t = parse_bracketed(tree).unwrap();
        let tokens: Vec<String> = t.leaves().iter().map(|s| s.to_string()).collect();
        let inst = AbsaInstance {
            id: "c".into(),
            tokens,
            aspect: AspectSpan { start, end },
            gold: None,
        };
        bind(inst, None, Some(t), None).unwrap()
    }

    #[test]
    fn whole_sentence_when_short() {
        let pi = parsed("(S (NP (DT the) (NN bar)) (VP (VBZ rocks)))", 1, 2);
        let b = extract_constituent(&pi, 10, None).unwrap();
        assert!(!b.fallback);
        let values: Vec<_> = b.values().collect();
        assert_eq!(values, vec!["the-S", "bar-S", "rocks-S"]);
        let keys: Vec<_> = b.keys().collect();
        assert_eq!(keys, vec!["the", "bar", "rocks"]);
    }

    #[test]
    fn long_sentence_picks_inner_np() {
        let filler: Vec<String> = (0..11).map(|i| format!("(NN f{i})")).collect();
        let tree = format!(
            "(S (NP (DT the) (JJ cold) (JJ bar) (NN service)) (VP (VBD was) {}))",
            filler.join(" ")
        );
        let pi = parsed(&tree, 3, 4);
        assert_eq!(pi.instance.tokens.len(), 16);
        let b = extract_constituent(&pi, 10, None).unwrap();
        let values: Vec<_> = b.values().collect();
        assert_eq!(values, vec!["the-NP", "cold-NP", "bar-NP", "service-NP"]);
        assert!(b.len() <= 9);
    }

    #[test]
    fn fallback_when_nothing_short_enough() {
        let words: Vec<String> = (0..12).map(|i| format!("(NN w{i})")).collect();
        let pi = parsed(&format!("(S (NP {}))", words.join(" ")), 2, 3);
        let b = extract_constituent(&pi, 10, None).unwrap();
        assert!(b.fallback);
        assert_eq!(b.entries, vec![("w2".to_string(), "w2-NP".to_string())]);
    }

    #[test]
    fn memory_truncates_toward_aspect() {
        let pi = parsed("(S (NP (DT the) (JJ cold) (NN bar)) (VP (VBZ is) (ADJP (JJ bad))))", 2, 3);
        let b = extract_constituent(&pi, 10, Some(3)).unwrap();
        let keys: Vec<_> = b.keys().collect();
        assert_eq!(keys, vec!["cold", "bar", "is"]);
        assert_eq!(b.capacity, 3);
    }

    #[test]
    fn missing_annotation() {
        let mut pi = parsed("(NP (NN bar))", 0, 1);
        pi.constituency = None;
        assert!(extract_constituent(&pi, 10, None).is_err());
    }
}
