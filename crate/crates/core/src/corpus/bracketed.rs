//! Penn-style bracketed constituency trees.

use std::collections::HashMap;

use super::CorpusError;

/// A phrase node, or a preterminal `(POS word)` when `word` is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstNode {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub word: Option<String>,
    pub children: Vec<ConstNode>,
}

impl ConstNode {
    pub fn is_preterminal(&self) -> bool {
        self.word.is_some()
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    fn write(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        if let Some(w) = &self.word {
            out.push(' ');
            out.push_str(w);
        }
        for c in &self.children {
            out.push(' ');
            c.write(out);
        }
        out.push(')');
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstTree {
    pub root: ConstNode,
}

impl ConstTree {
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a ConstNode, out: &mut Vec<&'a str>) {
            match &n.word {
                Some(w) => out.push(w),
                None => n.children.iter().for_each(|c| walk(c, out)),
            }
        }
        walk(&self.root, &mut out);
        out
    }

    /// Every node paired with its depth (root = 0), in pre-order.
    pub fn nodes(&self) -> Vec<(usize, &ConstNode)> {
        let mut out = Vec::new();
        let mut stack = vec![(0, &self.root)];
        while let Some((depth, n)) = stack.pop() {
            out.push((depth, n));
            for c in n.children.iter().rev() {
                stack.push((depth + 1, c));
            }
        }
        out
    }

    pub fn to_bracketed(&self) -> String {
        let mut s = String::new();
        self.root.write(&mut s);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !matches!(bytes[i], b'(' | b')')
                    && !bytes[i].is_ascii_whitespace()
                {
                    i += 1;
                }
                out.push((start, Tok::Atom(&text[start..i])));
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    next_leaf: usize,
}

impl<'a> Parser<'a> {
    fn err(offset: usize, message: impl Into<String>) -> CorpusError {
        CorpusError::Bracket {
            offset,
            message: message.into(),
        }
    }

    fn node(&mut self) -> Result<ConstNode, CorpusError> {
        let (open_at, tok) = self.toks[self.pos].clone();
        if tok != Tok::Open {
            return Err(Self::err(open_at, "expected '('"));
        }
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some((_, Tok::Atom(a))) => {
                self.pos += 1;
                a.to_string()
            }
            Some((_, Tok::Open)) => String::new(),
            Some((at, Tok::Close)) => return Err(Self::err(*at, "empty node")),
            None => return Err(Self::err(open_at, "unbalanced brackets: '(' never closed")),
        };
        let start = self.next_leaf;
        let mut children = Vec::new();
        let mut word = None;
        loop {
            match self.toks.get(self.pos) {
                None => return Err(Self::err(open_at, "unbalanced brackets: '(' never closed")),
                Some((_, Tok::Close)) => {
                    self.pos += 1;
                    break;
                }
                Some((at, Tok::Atom(a))) => {
                    if word.is_some() || !children.is_empty() {
                        return Err(Self::err(*at, format!("unexpected word {a:?}")));
                    }
                    word = Some(a.to_string());
                    self.next_leaf += 1;
                    self.pos += 1;
                }
                Some((at, Tok::Open)) => {
                    if word.is_some() {
                        return Err(Self::err(*at, "preterminal with a subtree"));
                    }
                    children.push(self.node()?);
                }
            }
        }
        if word.is_none() && children.is_empty() {
            return Err(Self::err(open_at, "empty node"));
        }
        if label.is_empty() {
            // `( (S ..))` wrappers are unwrapped; anything else needs a label.
            if children.len() == 1 && word.is_none() {
                return Ok(children.pop().expect("one child"));
            }
            return Err(Self::err(open_at, "node without a label"));
        }
        Ok(ConstNode {
            label,
            start,
            end: self.next_leaf,
            word,
            children,
        })
    }
}

/// Parses exactly one bracketed tree.
pub fn parse_bracketed(text: &str) -> Result<ConstTree, CorpusError> {
    let toks = tokenize(text);
    if toks.is_empty() {
        return Err(Parser::err(0, "empty input"));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        next_leaf: 0,
    };
    let root = p.node()?;
    if let Some((at, tok)) = p.toks.get(p.pos) {
        let message = if *tok == Tok::Close {
            "unbalanced brackets: unexpected ')'"
        } else {
            "trailing input after tree"
        };
        return Err(Parser::err(*at, message));
    }
    Ok(ConstTree { root })
}

/// Parses `id<TAB>(tree)` lines.
pub fn parse_bracketed_file(text: &str) -> Result<Vec<(String, ConstTree)>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, tree) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
            line: line_no,
            message: "expected `id<TAB>tree`".into(),
        })?;
        let tree = parse_bracketed(tree).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(&first_line) = seen.get(id) {
            return Err(CorpusError::DuplicateId {
                id: id.to_string(),
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(id.to_string(), line_no);
        out.push((id.to_string(), tree));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_leaf_np() {
        let t = parse_bracketed("(NP (DT the) (NN bar))").unwrap();
        assert_eq!(t.root.label, "NP");
        assert_eq!((t.root.start, t.root.end), (0, 2));
        assert_eq!(t.leaves(), vec!["the", "bar"]);
    }

    #[test]
    fn spans_partition() {
        let t = parse_bracketed("(S (NP (NN food)) (VP (VBZ rocks)))").unwrap();
        assert_eq!((t.root.start, t.root.end), (0, 2));
        let np = &t.root.children[0];
        assert_eq!((np.label.as_str(), np.start, np.end), ("NP", 0, 1));
        assert_eq!((t.root.children[1].start, t.root.children[1].end), (1, 2));
    }

    #[test]
    fn unbalanced_reports_offset() {
        let err = parse_bracketed("(NP (NN bar)").unwrap_err();
        match err {
            CorpusError::Bracket { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("unbalanced"));
            }
            other => panic!("{other}"),
        }
        let err = parse_bracketed("(NP (NN bar)))").unwrap_err();
        assert!(matches!(err, CorpusError::Bracket { offset: 13, .. }), "{err}");
    }

    #[test]
    fn empty_node() {
        assert!(parse_bracketed("(NP ())").unwrap_err().to_string().contains("empty node"));
        assert!(parse_bracketed("(NP)").unwrap_err().to_string().contains("empty node"));
    }

    #[test]
    fn unlabeled_wrapper_unwrapped() {
        let t = parse_bracketed("( (S (NN x)))").unwrap();
        assert_eq!(t.root.label, "S");
    }

    fn arb_node(depth: u32) -> BoxedStrategy<String> {
        let leaf = ("[A-Z]{1,3}", "[a-z]{1,5}").prop_map(|(p, w)| format!("({p} {w})"));
        if depth == 0 {
            return leaf.boxed();
        }
        prop_oneof![
            leaf,
            ("[A-Z]{1,3}", proptest::collection::vec(arb_node(depth - 1), 1..4))
                .prop_map(|(l, kids)| format!("({l} {})", kids.join(" "))),
        ]
        .boxed()
    }

    proptest! {
        #[test]
        fn bracket_round_trip(text in arb_node(4)) {
            let t = parse_bracketed(&text).unwrap();
            let again = parse_bracketed(&t.to_bracketed()).unwrap();
            prop_assert_eq!(&again, &t);
            prop_assert_eq!(t.root.end, t.leaves().len());
        }
    }
}
