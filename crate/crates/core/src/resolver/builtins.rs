//! The built-in component tags.

use std::rc::Rc;

use seqex_autodiff::{Optimizer, OptimizerKind};
use seqex_config::ConfigNode;

use crate::data::{FeatureReader, InputReader, PlainTextReader, SrcBatcher, Vocab};
use crate::error::Result;
use crate::inference::{AccuracyEvalTask, EvalTask, LossEvalTask, Metric, SearchStrategy};
use crate::nn::{
    BiLstmSeqTransducer, Bridge, CopyBridge, DecoderConfig, DefaultTranslator, DenseWordEmbedder, Embedder,
    MlpAttender, MlpSoftmaxDecoder, NoBridge, NoopEmbedder, Projector, PyramidalLstmSeqTransducer, SeqTransducer,
    SimpleWordEmbedder,
};
use crate::resolver::experiment::{ExpGlobal, ExperimentParts};
use crate::resolver::registry::{ref_node, ArgSpec, BuildCtx, ComponentSchema, DefaultCtx, Registry};
use crate::resolver::value::{Args, Instance, Value};
use crate::training::{
    LossCalculator, MleLoss, MultiTaskTrainingRegimen, ReinforceLoss, Schedule, SimpleTrainingRegimen, Trainer,
    TrainingRegimen, TrainingTask,
};

const LAYER_DIM: &str = "default_layer_dim";

fn empty(tag: &str) -> ConfigNode {
    ConfigNode::mapping([]).with_tag(tag)
}

fn sibling(ctx: &DefaultCtx<'_>, rel: &str) -> ConfigNode {
    ref_node(format!("{}.{rel}", ctx.ancestor(1)).trim_start_matches('.'))
}

fn reader_vocab(ctx: &DefaultCtx<'_>) -> ConfigNode {
    let reader = if ctx.key() == "src_embedder" { "src_reader" } else { "trg_reader" };
    sibling(ctx, &format!("{reader}.vocab"))
}

fn parent_hidden(ctx: &DefaultCtx<'_>) -> ConfigNode {
    sibling(ctx, "hidden_dim")
}

fn parent_layers(ctx: &DefaultCtx<'_>) -> ConfigNode {
    sibling(ctx, "layers")
}

fn model_ref() -> ConfigNode {
    ref_node("model")
}

/// The built-in registry.
pub fn builtin_registry() -> Registry {
    let mut r = Registry::new();
    for schema in builtin_schemas() {
        r.register(schema).expect("built-in schemas are consistent");
    }
    r
}

fn schema(tag: &'static str, args: Vec<ArgSpec>, build: crate::resolver::registry::BuildFn) -> ComponentSchema {
    ComponentSchema { tag, args, build }
}

fn builtin_schemas() -> Vec<ComponentSchema> {
    use ArgSpec as A;
    let int = ConfigNode::int;
    let float = ConfigNode::float;
    vec![
        schema(
            "ExpGlobal",
            vec![
                A::value("model_file", ConfigNode::string("{EXP}.mod")),
                A::value("log_file", ConfigNode::string("{EXP}.log")),
                A::value(LAYER_DIM, int(512)),
                A::value("dropout", float(0.0)),
                A::value("eval_only", ConfigNode::bool(false)),
                A::value("seed", int(0)),
            ],
            build_exp_global,
        ),
        schema(
            "Experiment",
            vec![
                A::value("exp_global", empty("ExpGlobal")),
                A::required("model"),
                A::null("train"),
                A::value("evaluate", ConfigNode::sequence(Vec::new())),
            ],
            build_experiment,
        ),
        schema(
            "DefaultTranslator",
            vec![
                A::required("src_reader"),
                A::required("trg_reader"),
                A::value("src_embedder", empty("SimpleWordEmbedder")),
                A::value("encoder", empty("BiLSTMSeqTransducer")),
                A::value("attender", empty("MlpAttender")),
                A::value("trg_embedder", empty("SimpleWordEmbedder")),
                A::value("decoder", empty("MlpSoftmaxDecoder")),
            ],
            build_translator,
        ),
        schema("PlainTextReader", vec![A::required("vocab")], build_plain_reader),
        schema("FeatureReader", vec![A::null("feat_dim")], build_feature_reader),
        schema("Vocab", vec![A::required("vocab_file")], build_vocab),
        schema(
            "SimpleWordEmbedder",
            vec![
                A::global("emb_dim", LAYER_DIM),
                A::contextual("vocab", reader_vocab),
                A::value("word_dropout", float(0.0)),
            ],
            build_simple_embedder,
        ),
        schema(
            "DenseWordEmbedder",
            vec![
                A::global("emb_dim", LAYER_DIM),
                A::contextual("vocab", reader_vocab),
                A::value("word_dropout", float(0.0)),
            ],
            build_dense_embedder,
        ),
        schema(
            "NoopEmbedder",
            vec![A::contextual("emb_dim", |c| sibling(c, "src_reader.feat_dim"))],
            build_noop_embedder,
        ),
        schema("BiLSTMSeqTransducer", encoder_args(), build_bilstm),
        schema("PyramidalLSTMSeqTransducer", encoder_args(), build_pyramidal),
        schema(
            "MlpAttender",
            vec![
                A::contextual("input_dim", |c| sibling(c, "encoder.hidden_dim")),
                A::contextual("state_dim", |c| sibling(c, "decoder.hidden_dim")),
                A::global("hidden_dim", LAYER_DIM),
            ],
            build_attender,
        ),
        schema(
            "MlpSoftmaxDecoder",
            vec![
                A::contextual("input_dim", |c| sibling(c, "encoder.hidden_dim")),
                A::contextual("trg_embed_dim", |c| sibling(c, "trg_embedder.emb_dim")),
                A::global("hidden_dim", LAYER_DIM),
                A::value("layers", int(1)),
                A::contextual("mlp_hidden_dim", |c| {
                    if c.node.get("vocab_projector").is_some_and(|p| !p.is_null()) {
                        ref_node(format!("{}.vocab_projector.emb_dim", c.path).trim_start_matches('.'))
                    } else {
                        c.exp_global.get(LAYER_DIM).cloned().unwrap_or_else(ConfigNode::null)
                    }
                }),
                A::value("bridge", empty("CopyBridge")),
                A::null("vocab_projector"),
                A::contextual("vocab", |c| sibling(c, "trg_reader.vocab")),
                A::global("dropout", "dropout"),
            ],
            build_decoder,
        ),
        schema(
            "CopyBridge",
            vec![A::contextual("dec_dim", parent_hidden), A::contextual("dec_layers", parent_layers)],
            build_copy_bridge,
        ),
        schema(
            "NoBridge",
            vec![A::contextual("dec_dim", parent_hidden), A::contextual("dec_layers", parent_layers)],
            build_no_bridge,
        ),
        schema(
            "SimpleTrainingRegimen",
            vec![
                A::value("model", model_ref()),
                A::required("src_file"),
                A::required("trg_file"),
                A::required("run_for_epochs"),
                A::value("batcher", empty("SrcBatcher")),
                A::value("trainer", empty("AdamTrainer")),
                A::value("loss_calculator", empty("MLELoss")),
                A::value("dev_tasks", ConfigNode::sequence(Vec::new())),
                A::value("lr_decay", float(0.5)),
                A::value("lr_decay_patience", int(1)),
                A::value("clip_grads", float(5.0)),
            ],
            build_simple_regimen,
        ),
        schema(
            "MultiTaskTrainingRegimen",
            vec![
                A::required("tasks"),
                A::required("run_for_epochs"),
                A::value("trainer", empty("AdamTrainer")),
                A::value("dev_tasks", ConfigNode::sequence(Vec::new())),
                A::value("lr_decay", float(0.5)),
                A::value("lr_decay_patience", int(1)),
                A::value("clip_grads", float(5.0)),
            ],
            build_multitask_regimen,
        ),
        schema(
            "TrainingTask",
            vec![
                A::required("model"),
                A::required("src_file"),
                A::required("trg_file"),
                A::value("batcher", empty("SrcBatcher")),
                A::contextual("trainer", |c| ref_node(format!("{}.trainer", c.ancestor(2)).trim_start_matches('.'))),
                A::value("loss_calculator", empty("MLELoss")),
            ],
            build_training_task,
        ),
        schema("SrcBatcher", vec![A::value("batch_size", int(32))], build_batcher),
        schema(
            "AdamTrainer",
            vec![
                A::value("alpha", float(0.001)),
                A::value("beta1", float(0.9)),
                A::value("beta2", float(0.999)),
                A::value("eps", float(1e-8)),
            ],
            build_adam,
        ),
        schema("SimpleSGDTrainer", vec![A::value("e0", float(0.1))], build_sgd),
        schema("MLELoss", vec![A::value("label_smoothing", float(0.0))], build_mle),
        schema(
            "ReinforceLoss",
            vec![A::value("baseline_decay", float(0.9)), A::null("max_len")],
            build_reinforce,
        ),
        schema(
            "LossEvalTask",
            vec![
                A::value("model", model_ref()),
                A::required("src_file"),
                A::required("ref_file"),
                A::value("batcher", empty("SrcBatcher")),
            ],
            build_loss_eval,
        ),
        schema(
            "AccuracyEvalTask",
            vec![
                A::value("model", model_ref()),
                A::required("src_file"),
                A::required("ref_file"),
                A::value("hyp_file", ConfigNode::string("{EXP}.hyp")),
                A::value("eval_metrics", ConfigNode::string("bleu")),
                A::value("search_strategy", empty("BeamSearch")),
            ],
            build_accuracy_eval,
        ),
        schema(
            "BeamSearch",
            vec![
                A::value("beam_size", int(1)),
                A::value("len_norm_exp", float(0.0)),
                A::null("max_len"),
            ],
            build_beam,
        ),
        schema("GreedySearch", vec![A::null("max_len")], build_greedy),
        schema(
            "SamplingSearch",
            vec![
                A::value("sample_size", int(1)),
                A::value("temperature", float(1.0)),
                A::null("max_len"),
            ],
            build_sampling,
        ),
    ]
}

fn encoder_args() -> Vec<ArgSpec> {
    vec![
        ArgSpec::contextual("input_dim", |c| sibling(c, "src_embedder.emb_dim")),
        ArgSpec::global("hidden_dim", LAYER_DIM),
        ArgSpec::value("layers", ConfigNode::int(1)),
        ArgSpec::global("dropout", "dropout"),
    ]
}

fn build_exp_global(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let g = ExpGlobal {
        model_file: a.path_buf("model_file")?,
        log_file: a.path_buf("log_file")?,
        default_layer_dim: a.positive(LAYER_DIM)?,
        dropout: a.f64_in("dropout", 0.0, 1.0)?,
        eval_only: a.bool("eval_only")?,
        seed: a.usize("seed")? as u64,
    };
    Ok(Instance::of("ExpGlobal", Rc::new(g)))
}

fn build_experiment(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let parts = ExperimentParts {
        exp_global: a.component("exp_global")?,
        model: a.component("model")?,
        train: a.opt_component::<dyn TrainingRegimen>("train")?,
        evaluate: a.components::<dyn EvalTask>("evaluate")?,
    };
    Ok(Instance::of("Experiment", Rc::new(parts)))
}

fn build_translator(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t = DefaultTranslator::new(
        a.component::<dyn InputReader>("src_reader")?,
        a.component::<PlainTextReader>("trg_reader")?,
        a.component::<dyn Embedder>("src_embedder")?,
        a.component::<dyn SeqTransducer>("encoder")?,
        a.component::<MlpAttender>("attender")?,
        a.component::<dyn Embedder>("trg_embedder")?,
        a.component::<MlpSoftmaxDecoder>("decoder")?,
    )
    .map_err(|e| a.error("", e.to_string()))?;
    Ok(Instance::of("DefaultTranslator", Rc::new(t)))
}

fn build_plain_reader(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let r = Rc::new(PlainTextReader {
        vocab: a.component::<Vocab>("vocab")?,
    });
    Ok(Instance::build("PlainTextReader")
        .role(r.clone())
        .role(r as Rc<dyn InputReader>)
        .finish())
}

fn build_feature_reader(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let r = Rc::new(FeatureReader {
        feat_dim: a.opt_usize("feat_dim")?,
    });
    Ok(Instance::build("FeatureReader")
        .role(r.clone())
        .role(r as Rc<dyn InputReader>)
        .finish())
}

fn build_vocab(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let v = Vocab::read(a.path_buf("vocab_file")?).map_err(|e| a.error("vocab_file", e.to_string()))?;
    Ok(Instance::of("Vocab", Rc::new(v)))
}

/// A vocabulary size given either as a `Vocab` component or an integer.
fn vocab_size(a: &Args, name: &str) -> Result<usize> {
    match a.value(name)? {
        Value::Int(_) => a.positive(name),
        _ => Ok(a.component::<Vocab>(name)?.len()),
    }
}

fn build_simple_embedder(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let e = Rc::new(SimpleWordEmbedder::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        vocab_size(a, "vocab")?,
        a.positive("emb_dim")?,
        a.f64("word_dropout")?,
    )?);
    Ok(Instance::build("SimpleWordEmbedder")
        .role(e.clone())
        .role(e as Rc<dyn Embedder>)
        .finish())
}

fn build_dense_embedder(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let e = Rc::new(DenseWordEmbedder::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        vocab_size(a, "vocab")?,
        a.positive("emb_dim")?,
        a.f64("word_dropout")?,
    )?);
    Ok(Instance::build("DenseWordEmbedder")
        .role(e.clone())
        .role(e.clone() as Rc<dyn Embedder>)
        .role(e as Rc<dyn Projector>)
        .finish())
}

fn build_noop_embedder(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    if a.is_null("emb_dim") {
        return Err(a.error("emb_dim", "set emb_dim or the source reader's feat_dim"));
    }
    let e = Rc::new(NoopEmbedder {
        emb_dim: a.positive("emb_dim")?,
    });
    Ok(Instance::build("NoopEmbedder")
        .role(e.clone())
        .role(e as Rc<dyn Embedder>)
        .finish())
}

fn build_bilstm(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t = Rc::new(BiLstmSeqTransducer::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        a.positive("input_dim")?,
        a.positive("hidden_dim")?,
        a.positive("layers")?,
        a.f64_in("dropout", 0.0, 1.0)?,
    )?);
    Ok(Instance::build("BiLSTMSeqTransducer")
        .role(t.clone())
        .role(t as Rc<dyn SeqTransducer>)
        .finish())
}

fn build_pyramidal(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t = Rc::new(PyramidalLstmSeqTransducer::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        a.positive("input_dim")?,
        a.positive("hidden_dim")?,
        a.positive("layers")?,
        a.f64_in("dropout", 0.0, 1.0)?,
    )?);
    Ok(Instance::build("PyramidalLSTMSeqTransducer")
        .role(t.clone())
        .role(t as Rc<dyn SeqTransducer>)
        .finish())
}

fn build_attender(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let m = MlpAttender::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        a.positive("input_dim")?,
        a.positive("state_dim")?,
        a.positive("hidden_dim")?,
    )?;
    Ok(Instance::of("MlpAttender", Rc::new(m)))
}

fn build_decoder(ctx: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let cfg = DecoderConfig {
        input_dim: a.positive("input_dim")?,
        trg_embed_dim: a.positive("trg_embed_dim")?,
        hidden_dim: a.positive("hidden_dim")?,
        layers: a.positive("layers")?,
        mlp_hidden_dim: a.positive("mlp_hidden_dim")?,
        vocab_size: vocab_size(a, "vocab")?,
        dropout: a.f64_in("dropout", 0.0, 1.0)?,
    };
    let d = MlpSoftmaxDecoder::new(
        ctx.store,
        ctx.rng,
        &ctx.path,
        cfg,
        a.component::<dyn Bridge>("bridge")?,
        a.opt_component::<dyn Projector>("vocab_projector")?,
    )
    .map_err(|e| a.error("", e.to_string()))?;
    Ok(Instance::of("MlpSoftmaxDecoder", Rc::new(d)))
}

fn build_copy_bridge(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let b: Rc<dyn Bridge> = Rc::new(CopyBridge {
        dec_dim: a.positive("dec_dim")?,
        dec_layers: a.positive("dec_layers")?,
    });
    Ok(Instance::of("CopyBridge", b))
}

fn build_no_bridge(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let b: Rc<dyn Bridge> = Rc::new(NoBridge {
        dec_dim: a.positive("dec_dim")?,
        dec_layers: a.positive("dec_layers")?,
    });
    Ok(Instance::of("NoBridge", b))
}

fn schedule(a: &Args) -> Result<Schedule> {
    let s = Schedule {
        run_for_epochs: a.usize("run_for_epochs")?,
        dev_tasks: a.components::<dyn EvalTask>("dev_tasks")?,
        lr_decay: a.f64("lr_decay")?,
        lr_decay_patience: a.usize("lr_decay_patience")?,
        clip_grads: a.f64("clip_grads")?,
    };
    s.validate().map_err(|e| a.error("", e.to_string()))?;
    Ok(s)
}

fn build_simple_regimen(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let r: Rc<dyn TrainingRegimen> = Rc::new(SimpleTrainingRegimen {
        model: a.component("model")?,
        src_file: a.path_buf("src_file")?,
        trg_file: a.path_buf("trg_file")?,
        batcher: a.component("batcher")?,
        trainer: a.component("trainer")?,
        loss: a.component::<dyn LossCalculator>("loss_calculator")?,
        schedule: schedule(a)?,
    });
    Ok(Instance::of("SimpleTrainingRegimen", r))
}

fn build_multitask_regimen(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let tasks = a.components::<TrainingTask>("tasks")?;
    if tasks.len() < 2 {
        return Err(a.error("tasks", "a multi-task regimen needs at least two tasks"));
    }
    let r: Rc<dyn TrainingRegimen> = Rc::new(MultiTaskTrainingRegimen {
        tasks,
        schedule: schedule(a)?,
    });
    Ok(Instance::of("MultiTaskTrainingRegimen", r))
}

fn build_training_task(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t = TrainingTask {
        model: a.component("model")?,
        src_file: a.path_buf("src_file")?,
        trg_file: a.path_buf("trg_file")?,
        batcher: a.component("batcher")?,
        trainer: a.component("trainer")?,
        loss: a.component::<dyn LossCalculator>("loss_calculator")?,
    };
    Ok(Instance::of("TrainingTask", Rc::new(t)))
}

fn build_batcher(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let b = SrcBatcher {
        batch_size: a.positive("batch_size")?,
    };
    Ok(Instance::of("SrcBatcher", Rc::new(b)))
}

fn build_adam(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let kind = OptimizerKind::Adam {
        beta1: a.f64_in("beta1", 0.0, 1.0)?,
        beta2: a.f64_in("beta2", 0.0, 1.0)?,
        eps: a.f64("eps")?,
    };
    let alpha = a.f64("alpha")?;
    if alpha < 0.0 {
        return Err(a.error("alpha", "learning rate must be nonnegative"));
    }
    Ok(Instance::of("AdamTrainer", Rc::new(Trainer::new(Optimizer::new(kind, alpha)))))
}

fn build_sgd(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let e0 = a.f64("e0")?;
    if e0 < 0.0 {
        return Err(a.error("e0", "learning rate must be nonnegative"));
    }
    Ok(Instance::of("SimpleSGDTrainer", Rc::new(Trainer::new(Optimizer::sgd(e0)))))
}

fn build_mle(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let eps = a.f64("label_smoothing")?;
    if !(0.0..1.0).contains(&eps) {
        return Err(a.error("label_smoothing", "must be in [0, 1)"));
    }
    let l: Rc<dyn LossCalculator> = Rc::new(MleLoss { label_smoothing: eps });
    Ok(Instance::of("MLELoss", l))
}

fn build_reinforce(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let l = Rc::new(ReinforceLoss::new(
        a.f64_in("baseline_decay", 0.0, 1.0)?,
        a.opt_usize("max_len")?,
    ));
    Ok(Instance::build("ReinforceLoss")
        .role(l.clone())
        .role(l as Rc<dyn LossCalculator>)
        .finish())
}

fn build_loss_eval(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t: Rc<dyn EvalTask> = Rc::new(LossEvalTask::new(
        a.component("model")?,
        a.path_buf("src_file")?,
        a.path_buf("ref_file")?,
        a.component("batcher")?,
    ));
    Ok(Instance::of("LossEvalTask", t))
}

fn build_accuracy_eval(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let metrics = Metric::parse_list(a.str("eval_metrics")?).map_err(|m| a.error("eval_metrics", m))?;
    let t: Rc<dyn EvalTask> = Rc::new(AccuracyEvalTask {
        model: a.component("model")?,
        src_file: a.path_buf("src_file")?,
        ref_file: a.path_buf("ref_file")?,
        hyp_file: a.path_buf("hyp_file")?,
        metrics,
        search: (*a.component::<SearchStrategy>("search_strategy")?).clone(),
    });
    Ok(Instance::of("AccuracyEvalTask", t))
}

fn build_beam(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let alpha = a.f64("len_norm_exp")?;
    if alpha < 0.0 {
        return Err(a.error("len_norm_exp", "must be nonnegative"));
    }
    let s = SearchStrategy::Beam {
        beam_size: a.positive("beam_size")?,
        len_norm_exp: alpha,
        max_len: a.opt_usize("max_len")?,
    };
    Ok(Instance::of("BeamSearch", Rc::new(s)))
}

fn build_greedy(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let s = SearchStrategy::Beam {
        beam_size: 1,
        len_norm_exp: 0.0,
        max_len: a.opt_usize("max_len")?,
    };
    Ok(Instance::of("GreedySearch", Rc::new(s)))
}

fn build_sampling(_: &mut BuildCtx<'_>, a: &Args) -> Result<Instance> {
    let t = a.f64("temperature")?;
    if !(t > 0.0) {
        return Err(a.error("temperature", "must be positive"));
    }
    let s = SearchStrategy::Sampling {
        sample_size: a.positive("sample_size")?,
        temperature: t,
        max_len: a.opt_usize("max_len")?,
    };
    Ok(Instance::of("SamplingSearch", Rc::new(s)))
}
