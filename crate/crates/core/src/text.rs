//! Word-level tokenization and vocabulary management.
//!
//! Text is lowercased and split on whitespace. Ids `0..4` are reserved for
//! `[PAD]`, `[UNK]`, `[CLS]` and `[SEP]`; corpus tokens start at 4.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercased whitespace tokens of `text`.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Whitespace-normalized lowercase form of `text`.
pub fn normalized_text(text: &str) -> String {
    normalize(text).join(" ")
}

/// Immutable token/id mapping; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from all tokens occurring at least `min_count`
    /// times. Ids follow descending frequency, then lexicographic order.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in normalize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t))
    }

    /// Vocabulary whose non-reserved ids follow the given token order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut vocab = Self {
            token_to_id: HashMap::new(),
            id_to_token: RESERVED.iter().map(|s| s.to_string()).collect(),
        };
        for tok in tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {tok:?}")));
            }
            if vocab.token_to_id.contains_key(&tok) {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
            vocab.token_to_id.insert(tok.clone(), vocab.id_to_token.len());
            vocab.id_to_token.push(tok);
        }
        Ok(vocab)
    }

    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Token ids of `text`; unknown tokens map to `[UNK]`. No `[CLS]` or
    /// `[SEP]` is inserted.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()).unwrap_or(UNK))
            .collect()
    }

    /// Space-joined tokens; reserved ids render as their bracketed names.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let toks = ids
            .iter()
            .map(|&id| {
                self.token(id)
                    .ok_or_else(|| Error::invalid(format!("token id {id} out of range {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(toks.join(" "))
    }

    /// One token per line; line `i` holds id `i + 4`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for tok in &self.id_to_token[RESERVED.len()..] {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let lines = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(lines)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocabulary::build(&["a b", "a c"], 1).unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.id("c"), Some(6));
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let v = Vocabulary::build(&["a b", "a c"], 2).unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), None);
        assert_eq!(v.encode("b"), vec![UNK]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(Vocabulary::build(&empty, 1).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::build(&["a b"], 1).unwrap();
        assert!(v.encode("").is_empty());
        assert_eq!(v.encode("a a"), vec![4, 4]);
        assert_eq!(v.encode("A"), vec![4]);
        assert_eq!(v.encode("zzz-not-in-vocab"), vec![UNK]);
    }

    #[test]
    fn decode_examples() {
        let v = Vocabulary::build(&["a b"], 1).unwrap();
        assert_eq!(v.decode(&[CLS, 4, SEP]).unwrap(), "[CLS] a [SEP]");
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&["x y y z"], 1).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "y\nx\nz\n");
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read_from(&b"a\na\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_idempotent(ids in proptest::collection::vec(0usize..9, 0..20)) {
            let v = Vocabulary::build(&["p q r s t"], 1).unwrap();
            let once = v.encode(&v.decode(&ids).unwrap());
            let twice = v.encode(&v.decode(&once).unwrap());
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|&id| id == UNK || id >= RESERVED.len()));
        }

        #[test]
        fn in_vocab_text_round_trips(words in proptest::collection::vec("[a-e]{1,3}", 1..12)) {
            let text = words.join("  ");
            let v = Vocabulary::build(&[text.to_uppercase()], 1).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&text)).unwrap(), normalized_text(&text));
        }
    }
}
