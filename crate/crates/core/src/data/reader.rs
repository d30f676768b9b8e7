use std::path::Path;
use std::rc::Rc;

use crate::data::corpus::{read_features, read_plaintext, SrcSeq};
use crate::data::vocab::Vocab;
use crate::error::{Error, Result};

/// Reads one side of a corpus.
pub trait InputReader {
    fn read_src(&self, path: &Path) -> Result<Vec<SrcSeq>>;
    fn vocab(&self) -> Option<&Rc<Vocab>>;
}

/// Whitespace-tokenized text, one sentence per line.
#[derive(Debug)]
pub struct PlainTextReader {
    pub vocab: Rc<Vocab>,
}

impl PlainTextReader {
    /// Target sentences, each ending in `</s>`.
    pub fn read_trg(&self, path: &Path) -> Result<Vec<Vec<usize>>> {
        read_plaintext(path, &self.vocab, true)
    }
}

impl InputReader for PlainTextReader {
    fn read_src(&self, path: &Path) -> Result<Vec<SrcSeq>> {
        Ok(read_plaintext(path, &self.vocab, false)?
            .into_iter()
            .map(SrcSeq::Tokens)
            .collect())
    }

    fn vocab(&self) -> Option<&Rc<Vocab>> {
        Some(&self.vocab)
    }
}

/// Feature matrices in the `utt <id> <T> <d>` text container.
#[derive(Debug)]
pub struct FeatureReader {
    pub feat_dim: Option<usize>,
}

impl InputReader for FeatureReader {
    fn read_src(&self, path: &Path) -> Result<Vec<SrcSeq>> {
        let utts = read_features(path)?;
        if let Some(d) = self.feat_dim {
            if let Some((id, m)) = utts.iter().find(|(_, m)| m.shape()[1] != d) {
                return Err(Error::data(path, 0, format!("utterance {id} has dim {}, expected {d}", m.shape()[1])));
            }
        }
        Ok(utts.into_iter().map(|(_, m)| SrcSeq::Features(m)).collect())
    }

    fn vocab(&self) -> Option<&Rc<Vocab>> {
        None
    }
}
