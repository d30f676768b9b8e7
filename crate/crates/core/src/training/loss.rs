use std::cell::Cell;
use std::rc::Rc;

use seqex_autodiff::{Graph, NodeId, Tensor};

use crate::data::{Batch, ES, SS};
use crate::error::{config_err, Error, Result};
use crate::inference::{default_max_len, sample_index, sentence_bleu_plus1};
use crate::nn::DefaultTranslator;

/// Teacher-forced cross-entropy summed over all real target tokens, with
/// targets smoothed to `(1 - eps)·onehot + eps/V`.
pub fn mle_loss(g: &mut Graph<'_>, model: &DefaultTranslator, batch: &Batch, eps: f64) -> Result<NodeId> {
    if !(0.0..1.0).contains(&eps) {
        return config_err(format!("label smoothing must be in [0, 1), got {eps}"));
    }
    if batch.trg.is_empty() {
        return config_err("batch has no targets");
    }
    let b = batch.size();
    let enc = model.encode(g, &batch.src, &batch.src_mask)?;
    let mut state = model.initial_state(g, &enc)?;
    let mut prev = vec![SS; b];
    let mut terms = Vec::with_capacity(batch.trg.len());
    for (ys, mask) in batch.trg.iter().zip(&batch.trg_mask) {
        let (next, logits) = model.step(g, &enc, &state, &prev)?;
        let mut loss = g.pick_neg_log_softmax(logits, ys)?;
        if eps > 0.0 {
            let v = g.shape(logits)[1] as f64;
            let lsm = g.log_softmax(logits)?;
            let total = g.sum_last(lsm)?;
            let sharp = g.scale(loss, 1.0 - eps)?;
            let smooth = g.scale(total, -eps / v)?;
            loss = g.add(sharp, smooth)?;
        }
        if mask.iter().any(|&m| m != 1.0) {
            let m = g.input(Tensor::vector(mask.clone()));
            loss = g.mul(loss, m)?;
        }
        terms.push(g.sum(loss)?);
        state = next;
        prev.clone_from(ys);
    }
    Ok(g.add_n(&terms)?)
}

/// Produces a scalar training loss for a batch.
pub trait LossCalculator {
    fn loss(&self, g: &mut Graph<'_>, model: &DefaultTranslator, batch: &Batch) -> Result<NodeId>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleLoss {
    pub label_smoothing: f64,
}

impl LossCalculator for MleLoss {
    fn loss(&self, g: &mut Graph<'_>, model: &DefaultTranslator, batch: &Batch) -> Result<NodeId> {
        mle_loss(g, model, batch, self.label_smoothing)
    }
}

/// Reward of a hypothesis against a reference, both without `</s>`.
pub type RewardFn = Rc<dyn Fn(&[usize], &[usize]) -> f64>;

/// Sampled sequences and the `[B]` vector of their negative
/// log-probabilities.
pub struct Unrolled {
    pub samples: Vec<Vec<usize>>,
    pub nll: NodeId,
}

/// Score-function estimator with a moving-average baseline. The surrogate
/// is `Σ_j (r_j - b)·(-log p(ŷ_j))`, whose gradient is the policy gradient
/// of the expected reward (negated, for minimization).
pub struct ReinforceLoss {
    pub baseline_decay: f64,
    pub max_len: Option<usize>,
    baseline: Cell<f64>,
    reward: RewardFn,
}

fn strip_es(s: &[usize]) -> &[usize] {
    match s.last() {
        Some(&ES) => &s[..s.len() - 1],
        _ => s,
    }
}

impl ReinforceLoss {
    pub fn new(baseline_decay: f64, max_len: Option<usize>) -> Self {
        Self {
            baseline_decay,
            max_len,
            baseline: Cell::new(0.0),
            reward: Rc::new(|h: &[usize], r: &[usize]| sentence_bleu_plus1(h, r)),
        }
    }

    pub fn with_reward(mut self, reward: RewardFn) -> Self {
        self.reward = reward;
        self
    }

    pub fn baseline(&self) -> f64 {
        self.baseline.get()
    }

    pub fn set_baseline(&self, b: f64) {
        self.baseline.set(b);
    }

    /// Runs the decoder on sampled tokens, or on `forced` sequences when
    /// given. Sampling needs a training graph for its random stream.
    pub fn unroll(
        &self,
        g: &mut Graph<'_>,
        model: &DefaultTranslator,
        batch: &Batch,
        forced: Option<&[Vec<usize>]>,
    ) -> Result<Unrolled> {
        let b = batch.size();
        let caps: Vec<usize> = match forced {
            Some(f) => {
                if f.len() != b || f.iter().any(Vec::is_empty) {
                    return config_err("forced samples must be nonempty, one per batch entry");
                }
                f.iter().map(Vec::len).collect()
            }
            None => batch
                .src_lengths()
                .iter()
                .map(|&l| self.max_len.unwrap_or_else(|| default_max_len(l)))
                .collect(),
        };
        let enc = model.encode(g, &batch.src, &batch.src_mask)?;
        let mut state = model.initial_state(g, &enc)?;
        let mut prev = vec![SS; b];
        let mut samples: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut alive = vec![true; b];
        let mut terms = Vec::new();
        let steps = caps.iter().copied().max().unwrap_or(0);
        for t in 0..steps {
            if !alive.iter().any(|&a| a) {
                break;
            }
            let (next, logits) = model.step(g, &enc, &state, &prev)?;
            let ys: Vec<usize> = match forced {
                Some(f) => (0..b).map(|j| if alive[j] { f[j][t] } else { ES }).collect(),
                None => {
                    let lsm = g.log_softmax(logits)?;
                    let rows: Vec<Vec<f64>> = (0..b).map(|j| g.value(lsm).row(j).to_vec()).collect();
                    let rng = g
                        .rng()
                        .ok_or_else(|| Error::Config("sampling requires a training graph".into()))?;
                    rows.iter()
                        .zip(&alive)
                        .map(|(row, &a)| if a { sample_index(row, 1.0, rng) } else { ES })
                        .collect()
                }
            };
            let nll = g.pick_neg_log_softmax(logits, &ys)?;
            let mask: Vec<f64> = alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            let m = g.input(Tensor::vector(mask));
            terms.push(g.mul(nll, m)?);
            for j in 0..b {
                if alive[j] {
                    samples[j].push(ys[j]);
                    alive[j] = ys[j] != ES && samples[j].len() < caps[j];
                }
            }
            state = next;
            prev = ys;
        }
        let nll = g.add_n(&terms)?;
        Ok(Unrolled { samples, nll })
    }

    /// Surrogate loss for given samples; also returns their rewards. Does
    /// not touch the baseline.
    pub fn surrogate(
        &self,
        g: &mut Graph<'_>,
        model: &DefaultTranslator,
        batch: &Batch,
        forced: Option<&[Vec<usize>]>,
    ) -> Result<(NodeId, Vec<f64>)> {
        let un = self.unroll(g, model, batch, forced)?;
        let rewards: Vec<f64> = un
            .samples
            .iter()
            .enumerate()
            .map(|(j, s)| (self.reward)(strip_es(s), strip_es(&batch.trg_seq(j))))
            .collect();
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return config_err(format!("reward function returned {r}"));
        }
        let base = self.baseline.get();
        let w = g.input(Tensor::vector(rewards.iter().map(|r| r - base).collect()));
        let weighted = g.mul(un.nll, w)?;
        Ok((g.sum(weighted)?, rewards))
    }
}

impl LossCalculator for ReinforceLoss {
    fn loss(&self, g: &mut Graph<'_>, model: &DefaultTranslator, batch: &Batch) -> Result<NodeId> {
        let (loss, rewards) = self.surrogate(g, model, batch, None)?;
        let mut b = self.baseline.get();
        for r in rewards {
            b = self.baseline_decay * b + (1.0 - self.baseline_decay) * r;
        }
        self.baseline.set(b);
        Ok(loss)
    }
}
