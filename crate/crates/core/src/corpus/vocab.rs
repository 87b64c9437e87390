use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::LabeledExample;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id table with reserved PAD (0) and UNK (1) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from IND training examples. Tokens seen at least `min_freq` times
    /// get ids from 2 upward, most frequent first, ties in lexicographic order.
    pub fn build(examples: &[LabeledExample], min_freq: usize) -> Self {
        Self::from_token_streams(examples.iter().map(|e| e.utterance.tokens.as_slice()), min_freq)
    }

    pub fn from_token_streams<'a, I>(streams: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: HashMap<&'a str, usize> = HashMap::new();
        for tokens in streams {
            for t in tokens {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Self::specials_only();
        for (tok, _) in kept {
            vocab.push(tok.to_string());
        }
        vocab
    }

    fn specials_only() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.push(PAD_TOKEN.to_string());
        v.push(UNK_TOKEN.to_string());
        v
    }

    fn push(&mut self, token: String) {
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        // PAD and UNK are always present.
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Map tokens to exactly `max_len` ids (UNK for unknown, truncated, right
    /// padded with PAD). Also returns the unpadded length.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> (Vec<usize>, usize) {
        assert!(max_len >= 1, "max_len must be at least 1");
        let mut ids: Vec<usize> = tokens.iter().take(max_len).map(|t| self.id(t.as_ref())).collect();
        let len = ids.len();
        ids.resize(max_len, PAD_ID);
        (ids, len)
    }

    /// Inverse of [`encode`](Self::encode): PAD ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD_ID)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Two tab-separated columns, `token\tid`, one entry per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{tok}\t{id}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::InvalidInput(format!("vocabulary line {}: missing tab", lineno + 1)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("vocabulary line {}: bad id {id:?}", lineno + 1)))?;
            entries.push((id, tok.to_string()));
        }
        entries.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::InvalidInput(format!(
                    "vocabulary ids must be dense from 0; expected {expected}, found {id}"
                )));
            }
        }
        if entries.len() < 2 || entries[PAD_ID].1 != PAD_TOKEN || entries[UNK_ID].1 != UNK_TOKEN {
            return Err(Error::InvalidInput(
                "vocabulary must start with <pad> (0) and <unk> (1)".into(),
            ));
        }
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (_, tok) in entries {
            if vocab.token_to_id.contains_key(&tok) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {tok:?}")));
            }
            vocab.push(tok);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
