use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SS: usize = 0;
pub const ES: usize = 1;
pub const UNK: usize = 2;
pub const SS_STR: &str = "<s>";
pub const ES_STR: &str = "</s>";
pub const UNK_STR: &str = "<unk>";

/// Token/id table with `<s>`, `</s>` and `<unk>` fixed at ids 0, 1, 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocab from the non-reserved tokens, which get ids from 3.
    /// Returns the zero-based position of the first duplicate on failure.
    pub fn from_tokens<I, S>(tokens: I) -> std::result::Result<Self, (usize, String)>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [SS_STR, ES_STR, UNK_STR] {
            vocab.push(t.to_string());
        }
        for (i, t) in tokens.into_iter().enumerate() {
            let t = t.into();
            if vocab.index.contains_key(&t) {
                return Err((i, t));
            }
            vocab.push(t);
        }
        Ok(vocab)
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    /// One token per line; line `i` (1-based) gets id `i + 2`. Blank lines
    /// are skipped.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if !t.is_empty() {
                tokens.push(t.to_string());
                lines.push(i + 1);
            }
        }
        Self::from_tokens(tokens)
            .map_err(|(i, t)| Error::data(path, lines[i], format!("duplicate token {t:?}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `UNK` when absent.
    pub fn to_id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn to_token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.to_id(t)).collect()
    }

    /// Space-joined tokens, stopping at the first `</s>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != ES)
            .map(|&i| self.to_token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
