use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

/// Symbol reserved for id 0 in every vocabulary.
pub const UNK: &str = "<unk>";

/// Contiguous symbol ids with `UNK` at 0. Known symbols are stored sorted, so
/// the same symbol set always produces the same ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = symbols
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != UNK)
            .collect();
        let mut all = vec![UNK.to_string()];
        all.extend(set);
        Self::from_list(all).expect("sorted unique symbols")
    }

    /// Rebuilds a vocabulary from its stored symbol list (id order).
    pub fn from_list(symbols: Vec<String>) -> Result<Self, String> {
        if symbols.first().map(String::as_str) != Some(UNK) {
            return Err(format!("vocabulary must start with {UNK:?}"));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary symbol {s:?}"));
            }
        }
        Ok(Vocab { symbols, index })
    }

    /// Id of `symbol`, or 0 when unknown.
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(0)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        symbol != UNK && self.index.contains_key(symbol)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Number of ids including UNK.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() == 1
    }

    /// SHA-256 over the newline-joined symbol list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.symbols {
            h.update(s.as_bytes());
            h.update(b"\n");
        }
        crate::autodiff::hex(&h.finalize())
    }
}
