//! Corpus BLEU, WER and exact-match accuracy.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total hypothesis n-grams for one sentence.
fn ngram_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

fn check_corpus<T>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Eval(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Eval("empty corpus".into()));
    }
    Ok(())
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

/// Unsmoothed corpus BLEU-4 against a single reference per sentence.
/// Zero if any n-gram precision is zero.
pub fn corpus_bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=MAX_ORDER {
            let (m, t) = ngram_stats(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    let hyp_len = hyps.iter().map(Vec::len).sum();
    let ref_len = refs.iter().map(Vec::len).sum();
    Ok(brevity_penalty(hyp_len, ref_len) * log_p.exp())
}

/// Sentence BLEU with add-one smoothing on orders 2..4. An empty
/// hypothesis scores 0.
pub fn sentence_bleu_plus1<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=MAX_ORDER {
        let (m, t) = ngram_stats(hyp, reference, n);
        let (m, t) = if n == 1 { (m as f64, t as f64) } else { (m as f64 + 1.0, t as f64 + 1.0) };
        if m == 0.0 {
            return 0.0;
        }
        log_p += (m / t).ln();
    }
    brevity_penalty(hyp.len(), reference.len()) * (log_p / MAX_ORDER as f64).exp()
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total edit distance over total reference length.
pub fn corpus_wer<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    if ref_len == 0 {
        return Err(Error::Eval("references are all empty".into()));
    }
    let edits: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    Ok(edits as f64 / ref_len as f64)
}

/// Fraction of hypotheses identical to their reference.
pub fn sequence_accuracy<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h == r).count();
    Ok(hits as f64 / hyps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bleu,
    Wer,
    Acc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Wer => "wer",
            Metric::Acc => "acc",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Wer)
    }

    pub fn score<T: Eq + Hash>(self, hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
        match self {
            Metric::Bleu => corpus_bleu(hyps, refs),
            Metric::Wer => corpus_wer(hyps, refs),
            Metric::Acc => sequence_accuracy(hyps, refs),
        }
    }

    /// Parses a comma-separated list such as `bleu,wer`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>, String> {
        let list: Vec<Metric> = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        if list.is_empty() {
            return Err("no metric given".into());
        }
        Ok(list)
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "wer" => Ok(Metric::Wer),
            "acc" | "accuracy" => Ok(Metric::Acc),
            other => Err(format!("unknown metric '{other}' (expected bleu, wer or acc)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn short_hypothesis_example() {
        let b = corpus_bleu(&[toks("a b c d")], &[toks("a b c d e")]).unwrap();
        assert!((b - (-0.25f64).exp()).abs() < 1e-12);
        assert!((b - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn identity_and_zero_precision() {
        let c = vec![toks("the cat sat on the mat"), toks("a dog")];
        assert_eq!(corpus_bleu(&c, &c).unwrap(), 1.0);
        assert_eq!(corpus_bleu(&[toks("a b c")], &[toks("a b c")]).unwrap(), 0.0);
        assert_eq!(corpus_bleu(&[toks("x y z w")], &[toks("a b c d")]).unwrap(), 0.0);
    }

    #[test]
    fn clipping() {
        let (m, t) = ngram_stats(&toks("the the the"), &toks("the cat"), 1);
        assert_eq!((m, t), (1, 3));
    }

    #[test]
    fn smoothed_sentence_bleu() {
        assert!((sentence_bleu_plus1(&toks("a b c"), &toks("a b c")) - 1.0).abs() < 1e-12);
        // 1-gram 1/1, then (0+1)/(0+1) for higher orders; BP = exp(1 - 2).
        let s = sentence_bleu_plus1(&toks("a"), &toks("a b"));
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(sentence_bleu_plus1::<&str>(&[], &toks("a")), 0.0);
    }

    #[test]
    fn wer_examples() {
        assert!((corpus_wer(&[toks("a x c")], &[toks("a b c")]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(corpus_wer(&[vec![]], &[toks("a b c")]).unwrap(), 1.0);
        assert!(corpus_wer::<&str>(&[vec![]], &[vec![]]).is_err());
        assert_eq!(edit_distance(&toks("kitten"), &toks("sitting")), 1);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn corpus_shape_errors() {
        assert!(corpus_bleu(&[toks("a")], &[]).is_err());
        assert!(sequence_accuracy::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn metric_names() {
        assert_eq!(Metric::parse_list("bleu, wer").unwrap(), vec![Metric::Bleu, Metric::Wer]);
        assert!(Metric::parse_list("ter").is_err());
        assert!(!Metric::Wer.higher_is_better());
    }
}
