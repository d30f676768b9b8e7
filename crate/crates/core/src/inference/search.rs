//! Greedy, beam and sampling search over any autoregressive scorer.

use rand::Rng as _;
use seqex_autodiff::Rng;

use crate::data::{ES, SS};
use crate::error::{Error, Result};

/// An autoregressive model seen one token at a time.
pub trait StepScorer {
    type State: Clone;

    fn start(&mut self) -> Result<Self::State>;

    /// Feeds `prev` and returns the next state plus log-probabilities over
    /// the whole vocabulary.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, ending in `</s>` unless truncated.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub score: f64,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, logprob: f64, alpha: f64) -> Self {
        let len = effective_len(&tokens).max(1);
        let score = logprob / (len as f64).powf(alpha);
        Self { tokens, logprob, score }
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&ES)
    }

    /// Tokens without the final `</s>`.
    pub fn words(&self) -> &[usize] {
        &self.tokens[..effective_len(&self.tokens)]
    }
}

fn effective_len(tokens: &[usize]) -> usize {
    match tokens.last() {
        Some(&ES) => tokens.len() - 1,
        _ => tokens.len(),
    }
}

/// `logprob / length^alpha`.
pub fn normalize_score(logprob: f64, length: usize, alpha: f64) -> Result<f64> {
    if length == 0 {
        return Err(Error::Eval("cannot normalize a zero-length hypothesis".into()));
    }
    Ok(logprob / (length as f64).powf(alpha))
}

/// Default cap on generated tokens (including `</s>`).
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 5
}

struct Beam<S> {
    state: S,
    tokens: Vec<usize>,
    logprob: f64,
}

/// Beam search. Partial hypotheses are pruned on raw log-probability;
/// the returned list is ranked by length-normalized score, ties keeping
/// completion order.
pub fn beam_search<M: StepScorer>(model: &mut M, beam_size: usize, max_len: usize, alpha: f64) -> Result<Vec<Hypothesis>> {
    if beam_size == 0 {
        return Err(Error::Eval("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Eval("max_len must be at least 1".into()));
    }
    let mut active = vec![Beam {
        state: model.start()?,
        tokens: Vec::new(),
        logprob: 0.0,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(active.len());
        for (bi, beam) in active.iter().enumerate() {
            let prev = beam.tokens.last().copied().unwrap_or(SS);
            let (state, lps) = model.step(&beam.state, prev)?;
            cands.extend(lps.iter().enumerate().map(|(v, lp)| (beam.logprob + lp, v, bi)));
            next_states.push(state);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (lp, v, bi) in cands {
            let mut tokens = active[bi].tokens.clone();
            tokens.push(v);
            if v == ES {
                pool.push(Hypothesis::new(tokens, lp, alpha));
            } else {
                next.push(Beam {
                    state: next_states[bi].clone(),
                    tokens,
                    logprob: lp,
                });
            }
        }
        active = next;
        if pool.len() >= beam_size || active.is_empty() {
            break;
        }
    }
    // open beams at the length cap are kept as truncated
    pool.extend(
        active
            .into_iter()
            .filter(|b| b.tokens.len() == max_len)
            .map(|b| Hypothesis::new(b.tokens, b.logprob, alpha)),
    );
    pool.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(pool)
}

pub fn greedy_search<M: StepScorer>(model: &mut M, max_len: usize) -> Result<Hypothesis> {
    Ok(beam_search(model, 1, max_len, 0.0)?.remove(0))
}

/// Draws one sequence from `softmax(logp / temperature)`. The returned
/// log-probability is under the untempered model.
pub fn sample<M: StepScorer>(model: &mut M, temperature: f64, max_len: usize, rng: &mut Rng) -> Result<Hypothesis> {
    if !(temperature > 0.0) {
        return Err(Error::Eval(format!("temperature must be positive, got {temperature}")));
    }
    let mut state = model.start()?;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    for _ in 0..max_len {
        let prev = tokens.last().copied().unwrap_or(SS);
        let (next, lps) = model.step(&state, prev)?;
        let v = sample_index(&lps, temperature, rng);
        logprob += lps[v];
        tokens.push(v);
        state = next;
        if v == ES {
            break;
        }
    }
    Ok(Hypothesis::new(tokens, logprob, 0.0))
}

/// Index drawn from `softmax(logp / temperature)`.
pub fn sample_index(logp: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// A configured decoding strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchStrategy {
    Beam {
        beam_size: usize,
        len_norm_exp: f64,
        max_len: Option<usize>,
    },
    Sampling {
        sample_size: usize,
        temperature: f64,
        max_len: Option<usize>,
    },
}

impl SearchStrategy {
    pub fn greedy() -> Self {
        SearchStrategy::Beam {
            beam_size: 1,
            len_norm_exp: 0.0,
            max_len: None,
        }
    }

    pub fn max_len(&self, src_len: usize) -> usize {
        match self {
            SearchStrategy::Beam { max_len, .. } | SearchStrategy::Sampling { max_len, .. } => {
                max_len.unwrap_or_else(|| default_max_len(src_len))
            }
        }
    }

    /// Ranked hypotheses; samples are ranked by log-probability.
    pub fn decode<M: StepScorer>(&self, model: &mut M, src_len: usize, rng: &mut Rng) -> Result<Vec<Hypothesis>> {
        let max_len = self.max_len(src_len);
        match *self {
            SearchStrategy::Beam { beam_size, len_norm_exp, .. } => beam_search(model, beam_size, max_len, len_norm_exp),
            SearchStrategy::Sampling { sample_size, temperature, .. } => {
                let mut out = (0..sample_size.max(1))
                    .map(|_| sample(model, temperature, max_len, rng))
                    .collect::<Result<Vec<_>>>()?;
                out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqex_autodiff::SeedableRng;

    /// Bigram table: `lp[prev][next]`.
    struct Table(Vec<Vec<f64>>);

    impl StepScorer for Table {
        type State = ();
        fn start(&mut self) -> Result<()> {
            Ok(())
        }
        fn step(&mut self, _: &(), prev: usize) -> Result<((), Vec<f64>)> {
            Ok(((), self.0[prev].clone()))
        }
    }

    fn ln(p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x.ln()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_score(-10.0, 4, 1.5).unwrap(), -1.25);
        assert_eq!(normalize_score(-3.0, 5, 0.0).unwrap(), -3.0);
        assert_eq!(normalize_score(-3.0, 1, 2.7).unwrap(), -3.0);
        assert!(normalize_score(-1.0, 0, 1.0).is_err());
    }

    #[test]
    fn beam_beats_greedy_on_garden_path() {
        // ids: 0 <s>, 1 </s>, 2 a, 3 b. Greedy takes `a` (0.6) but then must
        // spread mass; `b` leads to a near-certain `</s>`.
        let t = Table(vec![
            ln(&[1e-9, 1e-9, 0.6, 0.4 - 2e-9]),
            ln(&[0.25, 0.25, 0.25, 0.25]),
            ln(&[0.2, 0.3, 0.25, 0.25]),
            ln(&[1e-9, 1.0 - 3e-9, 1e-9, 1e-9]),
        ]);
        let mut t = t;
        let g = greedy_search(&mut t, 2).unwrap();
        assert_eq!(g.tokens, vec![2, 1]);
        let b = beam_search(&mut t, 2, 2, 0.0).unwrap();
        assert_eq!(b[0].tokens, vec![3, 1]);
    }

    #[test]
    fn truncation_at_max_len() {
        let mut t = Table(vec![ln(&[0.1, 0.1, 0.8]), ln(&[0.3, 0.3, 0.4]), ln(&[0.1, 0.1, 0.8])]);
        let h = greedy_search(&mut t, 3).unwrap();
        assert_eq!(h.tokens, vec![2, 2, 2]);
        assert!(!h.finished());
        assert_eq!(h.words().len(), 3);
    }

    #[test]
    fn zero_length_hypothesis_is_scored_as_length_one() {
        let mut t = Table(vec![ln(&[0.1, 0.8, 0.1])]);
        let h = beam_search(&mut t, 1, 5, 2.0).unwrap().remove(0);
        assert_eq!(h.tokens, vec![ES]);
        assert_eq!(h.score, h.logprob);
    }

    #[test]
    fn rejects_bad_settings() {
        let mut t = Table(vec![ln(&[0.5, 0.5])]);
        assert!(beam_search(&mut t, 0, 3, 0.0).is_err());
        let mut rng = Rng::seed_from_u64(0);
        assert!(sample(&mut t, 0.0, 3, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_follows_temperature() {
        let mut t = Table(vec![ln(&[0.0, 0.3, 0.7]), ln(&[0.0, 0.3, 0.7]), ln(&[0.0, 0.3, 0.7])]);
        let draw = |seed, temp| {
            let mut rng = Rng::seed_from_u64(seed);
            let mut t = Table(t.0.clone());
            (0..2000)
                .map(|_| sample_index(&t.step(&(), 0).unwrap().1, temp, &mut rng))
                .filter(|&v| v == 2)
                .count() as f64
                / 2000.0
        };
        assert_eq!(draw(4, 1.0), draw(4, 1.0));
        assert!((draw(4, 1.0) - 0.7).abs() < 0.05);
        // T = 0.5 squares the odds: 0.49 / 0.58.
        assert!((draw(5, 0.5) - 0.49 / 0.58).abs() < 0.05);
        let mut rng = Rng::seed_from_u64(1);
        let h = sample(&mut t, 1.0, 10, &mut rng).unwrap();
        assert!(h.logprob <= 0.0);
    }
}
