use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;

/// Outcome of reading a polarity out of a model reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelParse {
    Label(Polarity),
    NoKeyword,
    /// More than one distinct polarity word, in order of first mention.
    Multiple(Vec<Polarity>),
}

impl LabelParse {
    pub fn label(&self) -> Option<Polarity> {
        match self {
            LabelParse::Label(p) => Some(*p),
            _ => None,
        }
    }

    pub fn failure_reason(&self) -> Option<String> {
        match self {
            LabelParse::Label(_) => None,
            LabelParse::NoKeyword => Some("no polarity keyword".into()),
            LabelParse::Multiple(ps) => Some(format!(
                "multiple polarity keywords: {}",
                ps.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", ")
            )),
        }
    }
}

fn keyword_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(positive|neutral|negative)\b").expect("valid regex"))
}

/// Case-insensitive whole-word search for the three polarity names.
/// Exactly one distinct name is a label; repeats of the same name are fine.
pub fn parse_label(text: &str) -> LabelParse {
    let mut found: Vec<Polarity> = Vec::new();
    for m in keyword_regex().find_iter(text) {
        let p: Polarity = m.as_str().to_ascii_lowercase().parse().expect("regex only matches labels");
        if !found.contains(&p) {
            found.push(p);
        }
    }
    match found.len() {
        0 => LabelParse::NoKeyword,
        1 => LabelParse::Label(found[0]),
        _ => LabelParse::Multiple(found),
    }
}
