use std::collections::BTreeMap;

use super::GatewayError;
use crate::corpus::{AbsaInstance, Polarity};
use crate::knowledge::KnowledgeKind;

/// Zero-knowledge template.
pub const ZERO_KNOWLEDGE_TEMPLATE: &str = "\
Sentence: {sentence}
Aspect: {aspect}
What is the sentiment polarity of the aspect in the sentence? Answer with exactly one word: positive, neutral or negative.
";

/// Template with one slot per knowledge plugin.
pub const PLUGIN_TEMPLATE: &str = "\
Sentence: {sentence}
Aspect: {aspect}
The prediction of the plugin is {plugin:dep}.
The prediction of the plugin is {plugin:const}.
The prediction of the plugin is {plugin:ccg}.
What is the sentiment polarity of the aspect in the sentence? Answer with exactly one word: positive, neutral or negative.
";

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Text(String),
    Sentence,
    Aspect,
    Plugin(KnowledgeKind),
}

/// Prompt text with `{sentence}`, `{aspect}` and `{plugin:<kind>}`
/// placeholders. `{{` and `}}` produce literal braces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
}

/// A rendered prompt plus the predictions that had no slot to go into.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub unused_predictions: Vec<KnowledgeKind>,
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, GatewayError> {
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((at, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|p| p.1) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|p| p.1) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    let mut closed = false;
                    for (_, c) in chars.by_ref() {
                        if c == '}' {
                            closed = true;
                            break;
                        }
                        name.push(c);
                    }
                    if !closed {
                        return Err(GatewayError::Template {
                            offset: at,
                            message: "unclosed '{'".into(),
                        });
                    }
                    let seg = match name.as_str() {
                        "sentence" => Segment::Sentence,
                        "aspect" => Segment::Aspect,
                        other => match other.strip_prefix("plugin:").map(str::parse::<KnowledgeKind>) {
                            Some(Ok(kind)) => Segment::Plugin(kind),
                            _ => {
                                return Err(GatewayError::Template {
                                    offset: at,
                                    message: format!("unknown placeholder {{{other}}}"),
                                })
                            }
                        },
                    };
                    if !text.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut text)));
                    }
                    segments.push(seg);
                }
                '}' => {
                    return Err(GatewayError::Template {
                        offset: at,
                        message: "unmatched '}'".into(),
                    })
                }
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(PromptTemplate {
            source: source.to_string(),
            segments,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn zero_knowledge() -> Self {
        Self::parse(ZERO_KNOWLEDGE_TEMPLATE).expect("built-in template")
    }

    pub fn with_plugins() -> Self {
        Self::parse(PLUGIN_TEMPLATE).expect("built-in template")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Plugin kinds with a slot, in order of first appearance.
    pub fn slots(&self) -> Vec<KnowledgeKind> {
        let mut out = Vec::new();
        for s in &self.segments {
            if let Segment::Plugin(k) = s {
                if !out.contains(k) {
                    out.push(*k);
                }
            }
        }
        out
    }

    /// Fills every placeholder. A slot without a prediction is an error; a
    /// prediction without a slot is reported in `unused_predictions`.
    pub fn render(
        &self,
        instance: &AbsaInstance,
        predictions: &BTreeMap<KnowledgeKind, Polarity>,
    ) -> Result<Rendered, GatewayError> {
        let mut text = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => text.push_str(t),
                Segment::Sentence => text.push_str(&instance.sentence_text()),
                Segment::Aspect => text.push_str(&instance.aspect_text()),
                Segment::Plugin(kind) => {
                    let p = predictions
                        .get(kind)
                        .ok_or(GatewayError::MissingPrediction { slot: *kind })?;
                    text.push_str(p.as_str());
                }
            }
        }
        let slots = self.slots();
        let unused_predictions = predictions.keys().filter(|k| !slots.contains(k)).copied().collect();
        Ok(Rendered {
            text,
            unused_predictions,
        })
    }
}
