use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Index of the begin-of-sequence token. Every vocabulary reserves slot 0 for it.
pub const BOS_ID: u32 = 0;

/// Largest vocabulary the desk-scale model supports.
pub const MAX_VOCAB: usize = 256;

/// Ordered set of token symbols. Symbol 0 is the begin-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary whose first symbol is the begin-of-sequence marker.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 || symbols.len() > MAX_VOCAB {
            return Err(Error::InvalidVocabulary(format!(
                "size {} outside [2, {MAX_VOCAB}]",
                symbols.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!("bad symbol {s:?}")));
            }
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// The synthetic vocabulary used by the generator: `<s>` followed by `n - 1`
    /// symbols `t1 .. t{n-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        let mut symbols = Vec::with_capacity(size);
        symbols.push("<s>".to_string());
        symbols.extend((1..size).map(|i| format!("t{i}")));
        Self::new(symbols)
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn bos_id(&self) -> u32 {
        BOS_ID
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    /// Parses whitespace-separated symbols. The begin-of-sequence symbol is rejected.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let ids = text
            .split_whitespace()
            .map(|s| match self.id(s) {
                Some(BOS_ID) => Err(Error::UnexpectedBos),
                Some(id) => Ok(id),
                None => Err(Error::InvalidVocabulary(format!("unknown symbol {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSequence(ids))
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for (i, &id) in seq.ids().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.symbol(id).unwrap_or("?"));
        }
        out
    }
}

/// A run of token ids. May be empty (an absent query); responses are checked
/// for nonemptiness where they are used.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `bos ⊕ self`.
    pub fn with_bos(&self) -> TokenSequence {
        let mut ids = Vec::with_capacity(self.0.len() + 1);
        ids.push(BOS_ID);
        ids.extend_from_slice(&self.0);
        TokenSequence(ids)
    }

    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut ids = self.0.clone();
        ids.extend_from_slice(&other.0);
        TokenSequence(ids)
    }

    /// Checks ids against a vocabulary size and rejects embedded BOS tokens.
    pub fn validate_body(&self, vocab_size: usize) -> Result<()> {
        for &id in &self.0 {
            if id as usize >= vocab_size {
                return Err(Error::InvalidToken { id, vocab_size });
            }
            if id == BOS_ID {
                return Err(Error::UnexpectedBos);
            }
        }
        Ok(())
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

impl core::fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.symbols.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_duplicates_and_tiny() {
        assert!(Vocabulary::new(vec!["<s>".into()]).is_err());
        assert!(Vocabulary::new(vec!["<s>".into(), "a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(vec!["<s>".into(), "a b".into()]).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::synthetic(5).unwrap();
        let s = v.encode("t1 t4  t2").unwrap();
        assert_eq!(s.ids(), &[1, 4, 2]);
        assert_eq!(v.decode(&s), "t1 t4 t2");
        assert!(v.encode("t9").is_err());
        assert_eq!(v.encode("<s>"), Err(Error::UnexpectedBos));
        assert!(v.encode("").unwrap().is_empty());
    }
}
