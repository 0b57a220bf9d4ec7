use std::ops::Range;

use super::{nearest_to_aspect, ExtractError, KnowledgeBundle, KnowledgeKind};
use crate::corpus::{AspectSpan, ParsedInstance};

/// Words on each side of the aspect term.
pub const DEFAULT_WINDOW: usize = 3;

/// `[start - w, end + w)` clipped to the sentence.
pub fn supertag_window_indices(aspect: AspectSpan, sentence_len: usize, w: usize) -> Range<usize> {
    aspect.start.saturating_sub(w)..(aspect.end + w).min(sentence_len)
}

/// Aspect tokens plus up to `w` tokens each side; keys are forms, values
/// `form_TAG` (e.g. `bar_N/N`).
pub fn extract_supertag_window(
    pi: &ParsedInstance,
    w: usize,
    memory: Option<usize>,
) -> Result<KnowledgeBundle, ExtractError> {
    let tags = pi.supertags.as_ref().ok_or_else(|| ExtractError::MissingAnnotation {
        id: pi.id().to_string(),
        kind: KnowledgeKind::Ccg,
    })?;
    if memory == Some(0) {
        return Err(ExtractError::ZeroCapacity);
    }
    let tokens = &pi.instance.tokens;
    let aspect = pi.instance.aspect;
    let indices: Vec<usize> = supertag_window_indices(aspect, tokens.len(), w).collect();
    let (indices, capacity) = match memory {
        Some(m) => (nearest_to_aspect(&indices, aspect, m), m),
        None => {
            let cap = indices.len().max(2 * w + aspect.len());
            (indices, cap)
        }
    };
    let entries = indices
        .into_iter()
        .map(|i| (tokens[i].clone(), format!("{}_{}", tokens[i], tags.get(i))))
        .collect();
    Ok(KnowledgeBundle::new(pi.id(), KnowledgeKind::Ccg, entries, capacity))
}
