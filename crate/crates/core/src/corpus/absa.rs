use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AbsaInstance, AspectSpan, CorpusError, Polarity};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    tokens: Vec<String>,
    aspect_start: usize,
    aspect_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<String>,
}

pub fn load_absa_jsonl(path: &Path) -> Result<Vec<AbsaInstance>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_absa_jsonl(&text)
}

/// Parses one instance per non-blank line. Line numbers in errors are 1-based.
pub fn parse_absa_jsonl(text: &str) -> Result<Vec<AbsaInstance>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if rec.tokens.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "no tokens".into(),
            });
        }
        if let Some(pos) = rec.tokens.iter().position(|t| t.is_empty()) {
            return Err(CorpusError::Malformed {
                line,
                message: format!("token {pos} is empty"),
            });
        }
        if rec.aspect_start == rec.aspect_end {
            return Err(CorpusError::EmptyAspect { line });
        }
        let aspect = AspectSpan::new(rec.aspect_start, rec.aspect_end, rec.tokens.len()).ok_or(
            CorpusError::InvalidSpan {
                line,
                start: rec.aspect_start,
                end: rec.aspect_end,
                len: rec.tokens.len(),
            },
        )?;
        let gold = match rec.polarity {
            None => None,
            Some(p) => Some(
                p.parse::<Polarity>()
                    .map_err(|value| CorpusError::UnknownPolarity { line, value })?,
            ),
        };
        if let Some(&first_line) = seen.get(&rec.id) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(rec.id.clone(), line);
        out.push(AbsaInstance {
            id: rec.id,
            tokens: rec.tokens,
            aspect,
            gold,
        });
    }
    Ok(out)
}

pub fn write_absa_jsonl<W: Write>(mut w: W, instances: &[AbsaInstance]) -> std::io::Result<()> {
    for inst in instances {
        let rec = Record {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            aspect_start: inst.aspect.start,
            aspect_end: inst.aspect.end,
            polarity: inst.gold.map(|p| p.as_str().to_string()),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
