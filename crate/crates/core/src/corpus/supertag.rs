use std::collections::HashMap;

use super::CorpusError;

/// One CCG supertag per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupertagSeq(Vec<String>);

impl SupertagSeq {
    pub fn new(tags: Vec<String>) -> Result<Self, CorpusError> {
        if tags.is_empty() {
            return Err(CorpusError::EmptyTags { line: 0 });
        }
        if tags.iter().any(|t| t.is_empty()) {
            return Err(CorpusError::Malformed {
                line: 0,
                message: "empty supertag".into(),
            });
        }
        Ok(SupertagSeq(tags))
    }

    pub fn tags(&self) -> &[String] {
        &self.0
    }

    pub fn get(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parses `id<TAB>tag1 tag2 ..` lines, in file order.
pub fn parse_supertags(text: &str) -> Result<Vec<(String, SupertagSeq)>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, rest) = raw.split_once('\t').ok_or_else(|| CorpusError::Malformed {
            line,
            message: "expected `id<TAB>tags`".into(),
        })?;
        let tags: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        if tags.is_empty() {
            return Err(CorpusError::EmptyTags { line });
        }
        if let Some(&first_line) = seen.get(id) {
            return Err(CorpusError::DuplicateId {
                id: id.to_string(),
                first_line,
                second_line: line,
            });
        }
        seen.insert(id.to_string(), line);
        out.push((id.to_string(), SupertagSeq(tags)));
    }
    Ok(out)
}
