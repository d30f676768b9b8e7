use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use seqex_autodiff::{Graph, Optimizer, ParamStore, Rng};
use seqex_config::ConfigNode;

use crate::data::{Batch, SrcBatcher};
use crate::error::{config_err, Error, Result};
use crate::inference::{EvalTask, Score};
use crate::log::{fmt_float, Logger};
use crate::nn::DefaultTranslator;
use crate::training::checkpoint::save_checkpoint;
use crate::training::loss::LossCalculator;
use crate::training::record::{DevOutcome, DevRecord};

/// An optimizer shared by every task that refers to it.
pub struct Trainer {
    optimizer: RefCell<Optimizer>,
}

impl Trainer {
    pub fn new(optimizer: Optimizer) -> Self {
        Self {
            optimizer: RefCell::new(optimizer),
        }
    }

    pub fn lr(&self) -> f64 {
        self.optimizer.borrow().lr()
    }

    pub fn set_lr(&self, lr: f64) {
        self.optimizer.borrow_mut().set_lr(lr);
    }

    pub fn step(&self, store: &mut ParamStore, grads: seqex_autodiff::Gradients) {
        self.optimizer.borrow_mut().step(store, grads);
    }
}

/// Where checkpoints go and what spec they record.
pub struct CheckpointTarget {
    pub dir: PathBuf,
    pub spec: ConfigNode,
}

/// Mutable experiment state handed to a regimen.
pub struct RunCtx<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
    pub log: &'a mut Logger,
    pub checkpoint: Option<&'a CheckpointTarget>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub checkpoints: usize,
    pub best_dev: Option<Score>,
    /// `(epoch, words, loss/word)` per epoch, per task.
    pub epoch_losses: Vec<Vec<(usize, usize, f64)>>,
}

pub trait TrainingRegimen {
    fn run(&self, ctx: &mut RunCtx<'_>) -> Result<TrainSummary>;
}

/// Settings shared by both regimens.
pub struct Schedule {
    pub run_for_epochs: usize,
    pub dev_tasks: Vec<Rc<dyn EvalTask>>,
    pub lr_decay: f64,
    pub lr_decay_patience: usize,
    pub clip_grads: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return config_err(format!("lr_decay must be in (0, 1), got {}", self.lr_decay));
        }
        if self.lr_decay_patience == 0 {
            return config_err("lr_decay_patience must be at least 1");
        }
        if !(self.clip_grads > 0.0) {
            return config_err(format!("clip_grads must be positive, got {}", self.clip_grads));
        }
        Ok(())
    }
}

/// Forward, backward, clip and update on one batch. Returns the summed
/// loss.
pub fn train_batch(
    store: &mut ParamStore,
    rng: &mut Rng,
    model: &DefaultTranslator,
    loss: &dyn LossCalculator,
    trainer: &Trainer,
    batch: &Batch,
    clip: f64,
) -> Result<f64> {
    let (value, mut grads) = {
        let mut g = Graph::training(store, rng);
        let l = loss.loss(&mut g, model, batch)?;
        let value = g.value(l).item();
        if !value.is_finite() {
            return Err(Error::Config(format!("non-finite loss {value}")));
        }
        (value, g.backward(l)?)
    };
    grads.clip_global_norm(clip);
    trainer.step(store, grads);
    Ok(value)
}

fn load_batches(model: &DefaultTranslator, src: &Path, trg: &Path, batcher: &SrcBatcher) -> Result<Vec<Batch>> {
    let srcs = model.src_reader.read_src(src)?;
    let trgs = model.trg_reader.read_trg(trg)?;
    if srcs.len() != trgs.len() {
        return Err(Error::Config(format!(
            "{} has {} lines but {} has {}",
            src.display(),
            srcs.len(),
            trg.display(),
            trgs.len()
        )));
    }
    batcher.pack(&srcs, &trgs)
}

fn distinct(trainers: impl IntoIterator<Item = Rc<Trainer>>) -> Vec<Rc<Trainer>> {
    let mut out: Vec<Rc<Trainer>> = Vec::new();
    for t in trainers {
        if !out.iter().any(|o| Rc::ptr_eq(o, &t)) {
            out.push(t);
        }
    }
    out
}

/// Runs dev tasks after an epoch, decays learning rates and saves
/// checkpoints. With no dev tasks every epoch is checkpointed.
fn end_of_epoch(
    ctx: &mut RunCtx<'_>,
    schedule: &Schedule,
    record: &mut DevRecord,
    trainers: &[Rc<Trainer>],
    summary: &mut TrainSummary,
) -> Result<()> {
    let mut save = schedule.dev_tasks.is_empty();
    let mut scores = Vec::new();
    for (i, task) in schedule.dev_tasks.iter().enumerate() {
        let s = task
            .evaluate(ctx.store, ctx.rng)
            .map_err(|e| e.context(format!("dev task {i}")))?;
        scores.push(s);
    }
    if let Some(primary) = scores.first().and_then(|s| s.first()) {
        match record.record(primary) {
            DevOutcome::Improved => {
                save = true;
                summary.best_dev = Some(primary.clone());
            }
            DevOutcome::Decay => {
                for t in trainers {
                    t.set_lr(t.lr() * schedule.lr_decay);
                }
            }
            DevOutcome::NoImprovement => {}
        }
    }
    let lr = trainers.first().map_or(0.0, |t| t.lr());
    for s in scores.iter().flatten() {
        ctx.log.log(format!("dev {}={} lr={}", s.metric, fmt_float(s.value), lr));
    }
    if save {
        if let Some(target) = ctx.checkpoint {
            save_checkpoint(&target.dir, &target.spec, ctx.store)?;
            summary.checkpoints += 1;
        }
    }
    Ok(())
}

pub struct SimpleTrainingRegimen {
    pub model: Rc<DefaultTranslator>,
    pub src_file: PathBuf,
    pub trg_file: PathBuf,
    pub batcher: Rc<SrcBatcher>,
    pub trainer: Rc<Trainer>,
    pub loss: Rc<dyn LossCalculator>,
    pub schedule: Schedule,
}

impl TrainingRegimen for SimpleTrainingRegimen {
    fn run(&self, ctx: &mut RunCtx<'_>) -> Result<TrainSummary> {
        self.schedule.validate()?;
        let mut summary = TrainSummary {
            epoch_losses: vec![Vec::new()],
            ..TrainSummary::default()
        };
        if self.schedule.run_for_epochs == 0 {
            return Ok(summary);
        }
        let batches = load_batches(&self.model, &self.src_file, &self.trg_file, &self.batcher)?;
        let mut record = DevRecord::new(self.schedule.lr_decay_patience)?;
        let trainers = [self.trainer.clone()];
        for epoch in 1..=self.schedule.run_for_epochs {
            let mut order: Vec<usize> = (0..batches.len()).collect();
            order.shuffle(ctx.rng);
            let (mut total, mut words) = (0.0, 0);
            for &b in &order {
                let batch = &batches[b];
                total += train_batch(
                    ctx.store,
                    ctx.rng,
                    &self.model,
                    self.loss.as_ref(),
                    &self.trainer,
                    batch,
                    self.schedule.clip_grads,
                )
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
                words += batch.trg_words();
            }
            let per_word = total / words as f64;
            ctx.log.log(format!("epoch={epoch} words={words} loss/word={}", fmt_float(per_word)));
            summary.epoch_losses[0].push((epoch, words, per_word));
            end_of_epoch(ctx, &self.schedule, &mut record, &trainers, &mut summary)?;
            summary.epochs = epoch;
        }
        Ok(summary)
    }
}

/// One task of a multi-task regimen.
pub struct TrainingTask {
    pub model: Rc<DefaultTranslator>,
    pub src_file: PathBuf,
    pub trg_file: PathBuf,
    pub batcher: Rc<SrcBatcher>,
    pub trainer: Rc<Trainer>,
    pub loss: Rc<dyn LossCalculator>,
}

/// Trains several tasks in round-robin order, one batch of each per cycle.
/// A task that runs out of batches is skipped for the rest of the epoch.
pub struct MultiTaskTrainingRegimen {
    pub tasks: Vec<Rc<TrainingTask>>,
    pub schedule: Schedule,
}

impl TrainingRegimen for MultiTaskTrainingRegimen {
    fn run(&self, ctx: &mut RunCtx<'_>) -> Result<TrainSummary> {
        self.schedule.validate()?;
        if self.tasks.len() < 2 {
            return config_err("a multi-task regimen needs at least two tasks");
        }
        let mut summary = TrainSummary {
            epoch_losses: vec![Vec::new(); self.tasks.len()],
            ..TrainSummary::default()
        };
        if self.schedule.run_for_epochs == 0 {
            return Ok(summary);
        }
        let batches = self
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                load_batches(&t.model, &t.src_file, &t.trg_file, &t.batcher).map_err(|e| e.context(format!("task {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut record = DevRecord::new(self.schedule.lr_decay_patience)?;
        let trainers = distinct(self.tasks.iter().map(|t| t.trainer.clone()));
        for epoch in 1..=self.schedule.run_for_epochs {
            let orders: Vec<Vec<usize>> = batches
                .iter()
                .map(|b| {
                    let mut o: Vec<usize> = (0..b.len()).collect();
                    o.shuffle(ctx.rng);
                    o
                })
                .collect();
            let mut totals = vec![(0.0, 0usize); self.tasks.len()];
            let cycles = orders.iter().map(Vec::len).max().unwrap_or(0);
            for c in 0..cycles {
                for (i, task) in self.tasks.iter().enumerate() {
                    let Some(&b) = orders[i].get(c) else { continue };
                    let batch = &batches[i][b];
                    let l = train_batch(
                        ctx.store,
                        ctx.rng,
                        &task.model,
                        task.loss.as_ref(),
                        &task.trainer,
                        batch,
                        self.schedule.clip_grads,
                    )
                    .map_err(|e| e.context(format!("task {i}, epoch {epoch}, batch {b}")))?;
                    totals[i].0 += l;
                    totals[i].1 += batch.trg_words();
                }
            }
            for (i, &(total, words)) in totals.iter().enumerate() {
                let per_word = total / words as f64;
                ctx.log.log(format!(
                    "epoch={epoch} task={i} words={words} loss/word={}",
                    fmt_float(per_word)
                ));
                summary.epoch_losses[i].push((epoch, words, per_word));
            }
            end_of_epoch(ctx, &self.schedule, &mut record, &trainers, &mut summary)?;
            summary.epochs = epoch;
        }
        Ok(summary)
    }
}
