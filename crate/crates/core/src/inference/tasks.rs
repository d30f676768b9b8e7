//! Evaluation tasks run after each epoch or at the end of an experiment.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use seqex_autodiff::{Graph, ParamStore, Rng};

use crate::data::{read_lines, Batch, SrcBatcher, SrcSeq};
use crate::error::{Error, Result};
use crate::inference::metrics::Metric;
use crate::inference::search::{Hypothesis, SearchStrategy, StepScorer};
use crate::nn::{DecoderState, DefaultTranslator, Encoded};
use crate::training::mle_loss;

/// One named evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub metric: String,
    pub value: f64,
    pub higher_is_better: bool,
}

impl Score {
    /// True if `self` is strictly better than `other`.
    pub fn better_than(&self, other: f64) -> bool {
        if self.higher_is_better {
            self.value > other
        } else {
            self.value < other
        }
    }
}

pub trait EvalTask {
    /// Scores the model; the first score is the primary one.
    fn evaluate(&self, store: &ParamStore, rng: &mut Rng) -> Result<Vec<Score>>;

    /// Files this task writes.
    fn outputs(&self) -> Vec<PathBuf> {
        Vec::new()
    }
}

/// Adapts a translator and one encoded source sentence to [`StepScorer`].
pub struct TranslatorScorer<'m, 'g> {
    pub model: &'m DefaultTranslator,
    pub graph: Graph<'g>,
    pub encoded: Encoded,
}

impl<'m, 'g> TranslatorScorer<'m, 'g> {
    pub fn new(model: &'m DefaultTranslator, store: &'g ParamStore, src: &SrcSeq) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::Eval("cannot decode an empty source".into()));
        }
        let batch = Batch::new(&[src], &[], vec![0])?;
        let mut graph = Graph::new(store);
        let encoded = model.encode(&mut graph, &batch.src, &batch.src_mask)?;
        Ok(Self { model, graph, encoded })
    }
}

impl StepScorer for TranslatorScorer<'_, '_> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        self.model.initial_state(&mut self.graph, &self.encoded)
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let (next, logits) = self.model.step(&mut self.graph, &self.encoded, state, &[prev])?;
        let lp = self.graph.log_softmax(logits)?;
        Ok((next, self.graph.value(lp).data().to_vec()))
    }
}

/// Best hypothesis for every source sentence, in input order.
pub fn decode_corpus(
    model: &DefaultTranslator,
    store: &ParamStore,
    srcs: &[SrcSeq],
    strategy: &SearchStrategy,
    rng: &mut Rng,
) -> Result<Vec<Hypothesis>> {
    srcs.iter()
        .enumerate()
        .map(|(i, src)| {
            let mut scorer =
                TranslatorScorer::new(model, store, src).map_err(|e| e.context(format!("sentence {}", i + 1)))?;
            Ok(strategy.decode(&mut scorer, src.len(), rng)?.remove(0))
        })
        .collect()
}

/// Teacher-forced NLL per target token (including `</s>`).
pub fn eval_loss(model: &DefaultTranslator, store: &ParamStore, batches: &[Batch]) -> Result<f64> {
    let mut total = 0.0;
    let mut words = 0;
    for batch in batches {
        let mut g = Graph::new(store);
        let loss = mle_loss(&mut g, model, batch, 0.0)?;
        total += g.value(loss).item();
        words += batch.trg_words();
    }
    if words == 0 {
        return Err(Error::Eval("empty evaluation corpus".into()));
    }
    Ok(total / words as f64)
}

/// Per-token dev loss.
pub struct LossEvalTask {
    pub model: Rc<DefaultTranslator>,
    pub src_file: PathBuf,
    pub ref_file: PathBuf,
    pub batcher: Rc<SrcBatcher>,
    batches: RefCell<Option<Rc<Vec<Batch>>>>,
}

impl LossEvalTask {
    pub fn new(model: Rc<DefaultTranslator>, src_file: PathBuf, ref_file: PathBuf, batcher: Rc<SrcBatcher>) -> Self {
        Self {
            model,
            src_file,
            ref_file,
            batcher,
            batches: RefCell::new(None),
        }
    }

    fn batches(&self) -> Result<Rc<Vec<Batch>>> {
        if let Some(b) = self.batches.borrow().as_ref() {
            return Ok(b.clone());
        }
        let srcs = self.model.src_reader.read_src(&self.src_file)?;
        let trgs = self.model.trg_reader.read_trg(&self.ref_file)?;
        if srcs.len() != trgs.len() {
            return Err(Error::Eval(format!(
                "{} has {} lines but {} has {}",
                self.src_file.display(),
                srcs.len(),
                self.ref_file.display(),
                trgs.len()
            )));
        }
        let b = Rc::new(self.batcher.pack(&srcs, &trgs)?);
        *self.batches.borrow_mut() = Some(b.clone());
        Ok(b)
    }
}

impl EvalTask for LossEvalTask {
    fn evaluate(&self, store: &ParamStore, _rng: &mut Rng) -> Result<Vec<Score>> {
        let value = eval_loss(&self.model, store, &self.batches()?)?;
        Ok(vec![Score {
            metric: "loss".into(),
            value,
            higher_is_better: false,
        }])
    }
}

/// Decodes a source file, writes the hypotheses and scores them.
pub struct AccuracyEvalTask {
    pub model: Rc<DefaultTranslator>,
    pub src_file: PathBuf,
    pub ref_file: PathBuf,
    pub hyp_file: PathBuf,
    pub metrics: Vec<Metric>,
    pub search: SearchStrategy,
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

impl EvalTask for AccuracyEvalTask {
    fn evaluate(&self, store: &ParamStore, rng: &mut Rng) -> Result<Vec<Score>> {
        let srcs = self.model.src_reader.read_src(&self.src_file)?;
        let refs: Vec<Vec<String>> = read_lines(&self.ref_file)?
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect();
        if srcs.len() != refs.len() {
            return Err(Error::Eval(format!(
                "{} has {} lines but {} has {}",
                self.src_file.display(),
                srcs.len(),
                self.ref_file.display(),
                refs.len()
            )));
        }
        let hyps = decode_corpus(&self.model, store, &srcs, &self.search, rng)?;
        let vocab = self.model.trg_vocab();
        let lines: Vec<String> = hyps.iter().map(|h| vocab.decode(h.words())).collect();
        create_parent(&self.hyp_file)?;
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(&self.hyp_file, text).map_err(|e| Error::io(&self.hyp_file, e))?;
        let hyp_toks: Vec<Vec<String>> = lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect();
        self.metrics
            .iter()
            .map(|m| {
                Ok(Score {
                    metric: m.name().into(),
                    value: m.score(&hyp_toks, &refs)?,
                    higher_is_better: m.higher_is_better(),
                })
            })
            .collect()
    }

    fn outputs(&self) -> Vec<PathBuf> {
        vec![self.hyp_file.clone()]
    }
}
