//! ABSA instances and their sidecar parse annotations.
//!
//! A split named `train` in a corpus directory consists of
//!
//! ```text
//! train.jsonl    {"id","tokens","aspect_start","aspect_end","polarity"} per line
//! train.conllu   dependency parses, `# sent_id = <id>` per block   (optional)
//! train.const    `<id>\t(S (NP ..) ..)` per line                    (optional)
//! train.ccg      `<id>\ttag1 tag2 ..` per line                      (optional)
//! ```

mod absa;
mod bracketed;
mod conllu;
mod supertag;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use absa::{load_absa_jsonl, parse_absa_jsonl, write_absa_jsonl};
pub use bracketed::{parse_bracketed, parse_bracketed_file, ConstNode, ConstTree};
pub use conllu::{parse_conllu, DepSentence, DepTree};
pub use supertag::{parse_supertags, SupertagSeq};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: empty aspect span")]
    EmptyAspect { line: usize },
    #[error("line {line}: aspect span [{start},{end}) invalid for {len} tokens")]
    InvalidSpan {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: unknown polarity {value:?}")]
    UnknownPolarity { line: usize, value: String },
    #[error("line {line}: {message}")]
    Conllu { line: usize, message: String },
    #[error("sentence {sent_id:?}: head cycle through token {token}")]
    Cycle { sent_id: String, token: usize },
    #[error("block starting at line {line}: missing `# sent_id` comment")]
    MissingSentId { line: usize },
    #[error("sentence {sent_id:?}, line {line}: head {head} out of range for {len} tokens")]
    HeadOutOfRange {
        sent_id: String,
        line: usize,
        head: usize,
        len: usize,
    },
    #[error("sentence {sent_id:?}: expected exactly one root, found {found}")]
    RootCount { sent_id: String, found: usize },
    #[error("bracketed tree, offset {offset}: {message}")]
    Bracket { offset: usize, message: String },
    #[error("line {line}: empty tag list")]
    EmptyTags { line: usize },
    #[error("instance {id:?}: {annotation} has {annotation_len} tokens but the instance has {tokens}")]
    LengthMismatch {
        id: String,
        annotation: &'static str,
        tokens: usize,
        annotation_len: usize,
    },
    #[error("instance {id:?}: constituency leaf {index} is {leaf:?} but token is {token:?}")]
    FringeMismatch {
        id: String,
        index: usize,
        leaf: String,
        token: String,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Sentiment label. The declaration order is the classifier's label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Polarity> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(other.to_string()),
        }
    }
}

/// Half-open token range `[start, end)` of the aspect term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectSpan {
    pub start: usize,
    pub end: usize,
}

impl AspectSpan {
    pub fn new(start: usize, end: usize, sentence_len: usize) -> Option<Self> {
        (start < end && end <= sentence_len).then_some(AspectSpan { start, end })
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbsaInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub aspect: AspectSpan,
    pub gold: Option<Polarity>,
}

impl AbsaInstance {
    pub fn aspect_tokens(&self) -> &[String] {
        &self.tokens[self.aspect.start..self.aspect.end]
    }

    pub fn sentence_text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn aspect_text(&self) -> String {
        self.aspect_tokens().join(" ")
    }
}

/// An instance with whichever annotations were available for it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedInstance {
    pub instance: AbsaInstance,
    pub dep: Option<DepTree>,
    pub constituency: Option<ConstTree>,
    pub supertags: Option<SupertagSeq>,
}

impl ParsedInstance {
    pub fn id(&self) -> &str {
        &self.instance.id
    }
}

fn normalize_leaf(word: &str) -> &str {
    match word {
        "-LRB-" => "(",
        "-RRB-" => ")",
        "-LSB-" => "[",
        "-RSB-" => "]",
        "-LCB-" => "{",
        "-RCB-" => "}",
        w => w,
    }
}

/// Attaches annotations to an instance after checking they cover the same tokens.
pub fn bind(
    instance: AbsaInstance,
    dep: Option<DepTree>,
    constituency: Option<ConstTree>,
    supertags: Option<SupertagSeq>,
) -> Result<ParsedInstance, CorpusError> {
    let n = instance.tokens.len();
    let mismatch = |annotation, annotation_len| CorpusError::LengthMismatch {
        id: instance.id.clone(),
        annotation,
        tokens: n,
        annotation_len,
    };
    if let Some(d) = &dep {
        if d.len() != n {
            return Err(mismatch("dependency tree", d.len()));
        }
    }
    if let Some(c) = &constituency {
        let leaves = c.leaves();
        if leaves.len() != n {
            return Err(mismatch("constituency tree", leaves.len()));
        }
        for (i, (leaf, tok)) in leaves.iter().zip(&instance.tokens).enumerate() {
            if normalize_leaf(leaf) != normalize_leaf(tok) {
                return Err(CorpusError::FringeMismatch {
                    id: instance.id.clone(),
                    index: i,
                    leaf: leaf.to_string(),
                    token: tok.clone(),
                });
            }
        }
    }
    if let Some(s) = &supertags {
        if s.len() != n {
            return Err(mismatch("supertag sequence", s.len()));
        }
    }
    Ok(ParsedInstance {
        instance,
        dep,
        constituency,
        supertags,
    })
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

/// Loads `<dir>/<split>.jsonl` plus whichever sidecars exist and binds them by id.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<ParsedInstance>, CorpusError> {
    let instances = load_absa_jsonl(&dir.join(format!("{split}.jsonl")))?;

    let conllu_path = dir.join(format!("{split}.conllu"));
    let mut deps: HashMap<String, DepTree> = HashMap::new();
    if conllu_path.exists() {
        for s in parse_conllu(&read(&conllu_path)?)? {
            deps.insert(s.sent_id, s.tree);
        }
    }
    let const_path = dir.join(format!("{split}.const"));
    let mut consts: HashMap<String, ConstTree> = HashMap::new();
    if const_path.exists() {
        consts = parse_bracketed_file(&read(&const_path)?)?.into_iter().collect();
    }
    let ccg_path = dir.join(format!("{split}.ccg"));
    let mut tags: HashMap<String, SupertagSeq> = HashMap::new();
    if ccg_path.exists() {
        tags = parse_supertags(&read(&ccg_path)?)?.into_iter().collect();
    }

    instances
        .into_iter()
        .map(|inst| {
            let dep = deps.remove(&inst.id);
            let constituency = consts.remove(&inst.id);
            let supertags = tags.remove(&inst.id);
            bind(inst, dep, constituency, supertags)
        })
        .collect()
}
