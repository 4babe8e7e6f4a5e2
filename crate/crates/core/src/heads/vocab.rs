use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::tokenize;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level vocabulary. On disk: one token per line, id = line number,
/// with the four reserved tokens on lines 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Schema(format!("vocabulary line {i}: bad token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("vocabulary line {i}: duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary from training sentences, most frequent words
    /// first (ties alphabetical).
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for w in tokenize(s) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !RESERVED.contains(&w.as_str())).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("tokenizer output is a valid vocabulary")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `BOS`, word ids, `EOS`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(tokenize(text).iter().map(|w| self.id(w)));
        ids.push(EOS);
        ids
    }

    /// Joins word tokens, skipping `PAD`/`BOS` and stopping at `EOS`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Schema(format!(
                "vocabulary must start with {}",
                RESERVED.join(", ")
            )));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_encode_decode() {
        let v = Vocabulary::build(["The ball goes out.", "[PLAYER] takes the corner"]);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(4), Some("the"));
        let ids = v.encode("the corner goes wide");
        assert_eq!(ids[0], BOS);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(ids[4], UNK);
        assert_eq!(v.decode(&ids), "the corner goes <unk>");
        assert_eq!(v.decode(&v.encode("[PLAYER] takes")), "[PLAYER] takes");
    }

    #[test]
    fn file_round_trip_and_validation() {
        let v = Vocabulary::build(["a b c", "c d"]);
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::parse("a\nb\n").is_err());
        assert!(Vocabulary::parse("<pad>\n<bos>\n<eos>\n<unk>\nx\nx\n").is_err());
    }
}
