//! Basic-layer CoNLL-U reader. Only ID, FORM, HEAD and DEPREL are used;
//! multiword-token ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use super::CorpusError;

/// Dependency tree over `n` tokens. `heads[i]` is 0 for the synthetic ROOT,
/// otherwise the 1-based position of token `i`'s head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    heads: Vec<usize>,
    rels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepSentence {
    pub sent_id: String,
    pub forms: Vec<String>,
    pub tree: DepTree,
}

fn validate(heads: &[usize], rels: &[String], sent_id: &str) -> Result<(), CorpusError> {
    let n = heads.len();
    if rels.len() != n {
        return Err(CorpusError::Conllu {
            line: 0,
            message: format!("{} heads but {} relations", n, rels.len()),
        });
    }
    if let Some(i) = rels.iter().position(|r| r.is_empty()) {
        return Err(CorpusError::Conllu {
            line: 0,
            message: format!("sentence {sent_id:?}: empty relation on token {}", i + 1),
        });
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(CorpusError::HeadOutOfRange {
                sent_id: sent_id.to_string(),
                line: i + 1,
                head: h,
                len: n,
            });
        }
    }
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        // A cycle with no root shows up here too; report it as a cycle when
        // every token does have a head.
        if roots == 0 && n > 0 {
            return Err(CorpusError::Cycle {
                sent_id: sent_id.to_string(),
                token: 1,
            });
        }
        return Err(CorpusError::RootCount {
            sent_id: sent_id.to_string(),
            found: roots,
        });
    }
    // Walk up from every token; reaching ROOT within n steps means no cycle.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while heads[cur] != 0 {
            cur = heads[cur] - 1;
            steps += 1;
            if steps > n {
                return Err(CorpusError::Cycle {
                    sent_id: sent_id.to_string(),
                    token: start + 1,
                });
            }
        }
    }
    Ok(())
}

impl DepTree {
    pub fn new(heads: Vec<usize>, rels: Vec<String>) -> Result<Self, CorpusError> {
        validate(&heads, &rels, "<tree>")?;
        Ok(DepTree { heads, rels })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Raw head column (0 = ROOT, else 1-based).
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn rels(&self) -> &[String] {
        &self.rels
    }

    /// 0-based head of token `i`, or `None` when its head is ROOT.
    pub fn head_of(&self, i: usize) -> Option<usize> {
        self.heads[i].checked_sub(1)
    }

    pub fn rel(&self, i: usize) -> &str {
        &self.rels[i]
    }

    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).expect("validated tree has a root")
    }

    /// Tokens reachable from the root by following dependents.
    pub fn reachable_from_root(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![self.root()];
        let mut count = 0;
        while let Some(i) = stack.pop() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            count += 1;
            for (j, h) in self.heads.iter().enumerate() {
                if *h == i + 1 {
                    stack.push(j);
                }
            }
        }
        count
    }

    /// Undirected labelled edges `(a, b, rel)` with `b` the head of `a`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
        (0..self.len()).filter_map(move |i| self.head_of(i).map(|h| (i, h, self.rel(i))))
    }

    /// Ten-column CoNLL-U block (without trailing blank line).
    pub fn to_conllu(&self, sent_id: &str, forms: &[String]) -> String {
        let mut out = format!("# sent_id = {sent_id}\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                forms[i],
                self.heads[i],
                self.rels[i]
            ));
        }
        out
    }
}

/// Parses blank-line separated CoNLL-U blocks.
pub fn parse_conllu(text: &str) -> Result<Vec<DepSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        out.push(parse_block(&block)?);
    }
    Ok(out)
}

fn parse_block(block: &[(usize, &str)]) -> Result<DepSentence, CorpusError> {
    let first_line = block[0].0;
    let mut sent_id = None;
    let mut forms = Vec::new();
    let mut heads = Vec::new();
    let mut rels = Vec::new();
    let mut token_lines = Vec::new();
    for &(line, text) in block {
        if let Some(comment) = text.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() < 8 {
            return Err(CorpusError::Conllu {
                line,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let expected = forms.len() + 1;
        if id.parse::<usize>().ok() != Some(expected) {
            return Err(CorpusError::Conllu {
                line,
                message: format!("token id {id:?} where {expected} was expected"),
            });
        }
        let head = cols[6].parse::<usize>().map_err(|_| CorpusError::Conllu {
            line,
            message: format!("HEAD {:?} is not a number", cols[6]),
        })?;
        forms.push(cols[1].to_string());
        heads.push(head);
        rels.push(cols[7].to_string());
        token_lines.push(line);
    }
    let sent_id = sent_id.ok_or(CorpusError::MissingSentId { line: first_line })?;
    let n = heads.len();
    if n == 0 {
        return Err(CorpusError::Conllu {
            line: first_line,
            message: format!("sentence {sent_id:?} has no tokens"),
        });
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(CorpusError::HeadOutOfRange {
                sent_id,
                line: token_lines[i],
                head: h,
                len: n,
            });
        }
    }
    validate(&heads, &rels, &sent_id)?;
    Ok(DepSentence {
        sent_id,
        forms,
        tree: DepTree { heads, rels },
    })
}
