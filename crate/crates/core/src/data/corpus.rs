use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use seqex_autodiff::Tensor;

use crate::data::vocab::{Vocab, ES};
use crate::error::{Error, Result};

/// One source sequence: token ids or a `[T, d]` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SrcSeq {
    Tokens(Vec<usize>),
    Features(Tensor),
}

impl SrcSeq {
    pub fn len(&self) -> usize {
        match self {
            SrcSeq::Tokens(t) => t.len(),
            SrcSeq::Features(f) => f.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Whitespace-tokenized sentences, one per line. Targets get `</s>`
/// appended.
pub fn read_plaintext(path: impl AsRef<Path>, vocab: &Vocab, target: bool) -> Result<Vec<Vec<usize>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|line| {
            let mut ids = vocab.encode(line);
            if target {
                ids.push(ES);
            }
            ids
        })
        .collect())
}

/// Reads the feature container: per utterance a header `utt <id> <T> <d>`
/// followed by `T` lines of `d` floats.
pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::new();
    while let Some((i, header)) = lines.next() {
        let err = |msg: String| Error::data(path, i + 1, msg);
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "utt" {
            return Err(err(format!("malformed header {header:?}, expected `utt <id> <T> <d>`")));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| err(format!("invalid {what} {s:?}")))
        };
        let (t, d) = (parse(fields[2], "frame count")?, parse(fields[3], "dimension")?);
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            let (j, row) = lines
                .next()
                .ok_or_else(|| err(format!("utterance {} ends early", fields[1])))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::data(path, j + 1, format!("invalid float {tok:?}")))?;
                data.push(v);
            }
            if data.len() - before != d {
                return Err(Error::data(
                    path,
                    j + 1,
                    format!("expected {d} values, found {}", data.len() - before),
                ));
            }
        }
        out.push((fields[1].to_string(), Tensor::new(vec![t, d], data)?));
    }
    Ok(out)
}

pub fn format_features(utts: &[(String, Tensor)]) -> String {
    let mut s = String::new();
    for (id, m) in utts {
        let (t, d) = (m.shape()[0], m.shape()[1]);
        writeln!(s, "utt {id} {t} {d}").unwrap();
        for r in 0..t {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.6}")).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
    }
    s
}
