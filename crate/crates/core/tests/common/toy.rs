//! Independent oracles: enumerable toy models and brute-force metrics.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqex::data::ES;
use seqex::inference::StepScorer;
use seqex::resolver::{builtin_registry, instantiate_graph, Experiment, Seeding};
use seqex_config::load_config;

/// Next-token log-probabilities depend on the whole prefix; each prefix
/// gets its own random distribution, drawn lazily from a seeded stream
/// keyed by the prefix.
pub struct PrefixModel {
    pub vocab: usize,
    pub seed: u64,
    pub sharpness: f64,
    cache: HashMap<Vec<usize>, Vec<f64>>,
}

impl PrefixModel {
    pub fn new(vocab: usize, seed: u64, sharpness: f64) -> Self {
        Self {
            vocab,
            seed,
            sharpness,
            cache: HashMap::new(),
        }
    }

    pub fn logp(&mut self, prefix: &[usize]) -> Vec<f64> {
        let (vocab, seed, sharp) = (self.vocab, self.seed, self.sharpness);
        self.cache
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let key = prefix.iter().fold(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15), |h, &t| {
                    h.rotate_left(7) ^ (t as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
                });
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let logits: Vec<f64> = (0..vocab).map(|_| sharp * rng.random_range(-1.0..1.0)).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
                logits.iter().map(|l| l - z).collect()
            })
            .clone()
    }
}

impl StepScorer for PrefixModel {
    type State = Option<Vec<usize>>;

    fn start(&mut self) -> seqex::Result<Self::State> {
        Ok(None)
    }

    fn step(&mut self, state: &Self::State, prev: usize) -> seqex::Result<(Self::State, Vec<f64>)> {
        let next = advance(state, prev);
        let lp = self.logp(&next);
        Ok((Some(next), lp))
    }
}

/// The prefix after feeding `prev`; the first call feeds `<s>`, which is
/// not part of the prefix.
fn advance(state: &Option<Vec<usize>>, prev: usize) -> Vec<usize> {
    match state {
        None => Vec::new(),
        Some(p) => {
            let mut n = p.clone();
            n.push(prev);
            n
        }
    }
}

/// Explicit next-token probabilities per prefix; unlisted prefixes end
/// the sequence with certainty.
pub struct TableModel {
    pub vocab: usize,
    pub table: HashMap<Vec<usize>, Vec<f64>>,
}

impl StepScorer for TableModel {
    type State = Option<Vec<usize>>;

    fn start(&mut self) -> seqex::Result<Self::State> {
        Ok(None)
    }

    fn step(&mut self, state: &Self::State, prev: usize) -> seqex::Result<(Self::State, Vec<f64>)> {
        let next = advance(state, prev);
        let lp = match self.table.get(&next) {
            Some(p) => p.iter().map(|x| x.ln()).collect(),
            None => (0..self.vocab).map(|v| if v == ES { 0.0 } else { f64::NEG_INFINITY }).collect(),
        };
        Ok((Some(next), lp))
    }
}

/// Every sequence the decoder can emit within `max_len` tokens: those
/// ending in `</s>`, plus the `</s>`-free ones cut off at `max_len`.
pub fn enumerate<M: StepScorer<State = Option<Vec<usize>>>>(model: &mut M, vocab: usize, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    fn go<M: StepScorer<State = Option<Vec<usize>>>>(
        m: &mut M,
        vocab: usize,
        max_len: usize,
        state: &Option<Vec<usize>>,
        prev: usize,
        toks: &mut Vec<usize>,
        lp: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let (next, lps) = m.step(state, prev).unwrap();
        for v in 0..vocab {
            toks.push(v);
            let l = lp + lps[v];
            if v == ES || toks.len() == max_len {
                out.push((toks.clone(), l));
            } else {
                go(m, vocab, max_len, &next, v, toks, l, out);
            }
            toks.pop();
        }
    }
    let mut out = Vec::new();
    let s = model.start().unwrap();
    go(model, vocab, max_len, &s, seqex::data::SS, &mut Vec::new(), 0.0, &mut out);
    out
}

/// The highest-probability sequence; ties go to the earlier enumerated.
pub fn exhaustive_argmax(all: &[(Vec<usize>, f64)]) -> (Vec<usize>, f64) {
    let mut best = all[0].clone();
    for c in &all[1..] {
        if c.1 > best.1 {
            best = c.clone();
        }
    }
    best
}

/// Minimal unit-cost edits, by trying every alignment path without
/// memoization.
pub fn alignment_min_edits<T: PartialEq>(h: &[T], r: &[T]) -> usize {
    match (h.split_first(), r.split_first()) {
        (None, _) => r.len(),
        (_, None) => h.len(),
        (Some((a, hs)), Some((b, rs))) => {
            let diag = alignment_min_edits(hs, rs) + usize::from(a != b);
            let ins = alignment_min_edits(hs, r) + 1;
            let del = alignment_min_edits(h, rs) + 1;
            diag.min(ins).min(del)
        }
    }
}

/// Writes a vocab of `real` tokens named `t0..` and returns its path.
pub fn vocab_file(dir: &Path, name: &str, real: usize) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, (0..real).map(|i| format!("t{i}\n")).collect::<String>()).unwrap();
    p
}

/// A token-to-token translator with tiny dimensions.
pub fn tiny_translator(dir: &Path, real_vocab: usize, dim: usize, extra_decoder: &str, seed: u64) -> Experiment {
    let v = vocab_file(dir, "tiny.vocab", real_vocab);
    let text = format!(
        "tiny: !Experiment
  exp_global: !ExpGlobal
    default_layer_dim: {dim}
    seed: {seed}
  model: !DefaultTranslator
    src_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    decoder: !MlpSoftmaxDecoder {{{extra_decoder}}}
",
        v = v.display()
    );
    build_single(&text)
}

/// A feature-to-token translator with a pyramidal encoder.
pub fn tiny_pyramidal(dir: &Path, real_vocab: usize, feat_dim: usize, dim: usize, layers: usize, seed: u64) -> Experiment {
    let v = vocab_file(dir, "tiny.vocab", real_vocab);
    let text = format!(
        "tiny: !Experiment
  exp_global: !ExpGlobal
    default_layer_dim: {dim}
    seed: {seed}
  model: !DefaultTranslator
    src_reader: !FeatureReader {{feat_dim: {feat_dim}}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    src_embedder: !NoopEmbedder {{}}
    encoder: !PyramidalLSTMSeqTransducer {{layers: {layers}}}
    decoder: !MlpSoftmaxDecoder {{bridge: !NoBridge {{}}}}
",
        v = v.display()
    );
    build_single(&text)
}

pub fn build_single(text: &str) -> Experiment {
    let doc = load_config(text).unwrap();
    let e = &doc.entries().unwrap()[0];
    instantiate_graph(&e.value, &builtin_registry(), &e.key, Seeding::default()).unwrap()
}

/// Every output sequence within two decoding steps over `v` ids.
pub fn two_step_sequences(v: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![ES]];
    for x in (0..v).filter(|&x| x != ES) {
        for y in 0..v {
            out.push(vec![x, y]);
        }
    }
    out
}

/// Largest gap between the exact expectation of the REINFORCE surrogate
/// gradient, `Σ_y p(y)·∇[(r(y) - b)·(-log p(y))]`, and the gradient of
/// the negated expected reward `-Σ_y r(y)·p(y)`, over all outputs of at
/// most two steps. Also returns the norm of the latter.
pub fn reinforce_gap(exp: &Experiment, src: &[usize], trg: &[usize], baseline: f64) -> (f64, f64) {
    use seqex::data::{Batch, SrcSeq};
    use seqex::training::ReinforceLoss;
    use seqex_autodiff::Graph;

    let s = SrcSeq::Tokens(src.to_vec());
    let b = Batch::new(&[&s], &[trg], vec![0]).unwrap();
    let seqs = two_step_sequences(exp.model.trg_vocab().len());
    let loss = ReinforceLoss::new(0.9, Some(2));
    loss.set_baseline(baseline);
    let probs: Vec<f64> = seqs
        .iter()
        .map(|y| {
            let mut g = Graph::new(&exp.store);
            let un = loss.unroll(&mut g, &exp.model, &b, Some(std::slice::from_ref(y))).unwrap();
            (-g.value(un.nll).item()).exp()
        })
        .collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let surrogate = {
        let mut g = Graph::new(&exp.store);
        let mut terms = Vec::new();
        for (y, p) in seqs.iter().zip(&probs) {
            let (l, _) = loss.surrogate(&mut g, &exp.model, &b, Some(std::slice::from_ref(y))).unwrap();
            terms.push(g.scale(l, *p).unwrap());
        }
        let total = g.add_n(&terms).unwrap();
        g.backward(total).unwrap()
    };
    let exact = {
        let mut g = Graph::new(&exp.store);
        let mut terms = Vec::new();
        for y in &seqs {
            let (_, r) = loss.surrogate(&mut g, &exp.model, &b, Some(std::slice::from_ref(y))).unwrap();
            let un = loss.unroll(&mut g, &exp.model, &b, Some(std::slice::from_ref(y))).unwrap();
            let neg = g.scale(un.nll, -1.0).unwrap();
            let p = g.exp(neg).unwrap();
            let p = g.sum(p).unwrap();
            terms.push(g.scale(p, -r[0]).unwrap());
        }
        let total = g.add_n(&terms).unwrap();
        g.backward(total).unwrap()
    };
    let gap = exp
        .store
        .ids()
        .map(|id| {
            let (x, y) = (surrogate.dense(id, &exp.store), exact.dense(id, &exp.store));
            x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    (gap, exact.global_norm())
}
