mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::toy::{
    alignment_min_edits, build_single, enumerate, exhaustive_argmax, reinforce_gap, tiny_pyramidal, tiny_translator,
    PrefixModel,
};
use common::{localize, p, FIG1, FIG2, FIG3, FIG_TRG_V};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqex::data::{write_synthetic, Batch, SrcSeq, SynthSpec, SynthTask, ES};
use seqex::inference::{beam_search, corpus_bleu, corpus_wer, Score};
use seqex::nn::Embedder;
use seqex::runner::{run_experiments, ExperimentResult, RunOptions, Status};
use seqex::training::{mle_loss, save_checkpoint, DevOutcome, DevRecord, Trainer};
use seqex_autodiff::gradcheck::{check, GradCheckOptions};
use seqex_autodiff::{DropoutMode, TensorError, Graph, NodeId, Optimizer, ParamId, ParamStore, Rng, Tensor};
use seqex_config::{parse_config, serialize_config, ConfigNode, Entry, Loc, NodeKind, Scalar};

fn copy_config(dir: &Path, batch: usize, seed: u64) -> String {
    let spec = |n, s| SynthSpec { task: SynthTask::Copy, vocab_size: 19, min_len: 1, max_len: 8, n, seed: s };
    let tr = write_synthetic(&spec(600, 101), &dir.join("copy_train")).unwrap();
    let dv = write_synthetic(&spec(100, 202), &dir.join("copy_dev")).unwrap();
    let out = dir.join("out");
    format!(
        "copy: !Experiment
  exp_global: !ExpGlobal
    model_file: {out}/{{EXP}}.mod
    log_file: {out}/{{EXP}}.log
    default_layer_dim: 32
    seed: {seed}
  model: !DefaultTranslator
    src_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    encoder: !BiLSTMSeqTransducer {{layers: 1}}
    decoder: !MlpSoftmaxDecoder {{layers: 1}}
  train: !SimpleTrainingRegimen
    run_for_epochs: 20
    batcher: !SrcBatcher {{batch_size: {batch}}}
    trainer: !AdamTrainer {{alpha: 0.001}}
    src_file: {ts}
    trg_file: {tt}
    dev_tasks:
    - !LossEvalTask
      src_file: {ds}
      ref_file: {dt}
  evaluate:
  - !AccuracyEvalTask
    src_file: {ds}
    ref_file: {dt}
    hyp_file: {out}/{{EXP}}.greedy
    eval_metrics: acc
    search_strategy: !GreedySearch {{}}
  - !AccuracyEvalTask
    src_file: {ds}
    ref_file: {dt}
    hyp_file: {out}/{{EXP}}.beam5
    eval_metrics: acc
    search_strategy: !BeamSearch {{beam_size: 5, len_norm_exp: 1.5}}
",
        out = p(&out),
        v = p(&tr.vocab),
        ts = p(&tr.src),
        tt = p(&tr.trg),
        ds = p(&dv.src),
        dt = p(&dv.trg),
    )
}

fn run_config(dir: &Path, file: &str, text: &str, opts: &RunOptions) -> ExperimentResult {
    let cfg = dir.join(file);
    fs::write(&cfg, text).unwrap();
    run_experiments(&cfg, opts).unwrap().remove(0)
}

fn pyramid_config(dir: &Path, batch: usize, noise: f64, epochs: usize, dim: usize) -> String {
    use seqex::data::{write_feature_task, FeatureSpec};
    let spec = |n, s| FeatureSpec {
        vocab_size: 13,
        feat_dim: 8,
        min_len: 2,
        max_len: 6,
        frames_per_token: 4,
        noise,
        n,
        seed: s,
        proto_seed: 7,
    };
    let tr = write_feature_task(&spec(500, 31), &dir.join("asr_train")).unwrap();
    let dv = write_feature_task(&spec(100, 32), &dir.join("asr_dev")).unwrap();
    let out = dir.join("out");
    format!(
        "asr: !Experiment
  exp_global: !ExpGlobal
    model_file: {out}/{{EXP}}.mod
    log_file: {out}/{{EXP}}.log
    default_layer_dim: {dim}
  model: !DefaultTranslator
    src_reader: !FeatureReader {{feat_dim: 8}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    src_embedder: !NoopEmbedder {{}}
    encoder: !PyramidalLSTMSeqTransducer {{layers: 3}}
    decoder: !MlpSoftmaxDecoder {{bridge: !NoBridge {{}}}}
  train: !SimpleTrainingRegimen
    run_for_epochs: {epochs}
    batcher: !SrcBatcher {{batch_size: {batch}}}
    src_file: {ts}
    trg_file: {tt}
    dev_tasks:
    - !LossEvalTask
      src_file: {ds}
      ref_file: {dt}
  evaluate:
  - !AccuracyEvalTask
    src_file: {ds}
    ref_file: {dt}
    hyp_file: {out}/{{EXP}}.hyp
    eval_metrics: wer
",
        out = p(&out),
        v = p(&tr.vocab),
        ts = p(&tr.src),
        tt = p(&tr.trg),
        ds = p(&dv.src),
        dt = p(&dv.trg),
    )
}

struct MtData {
    copy: seqex::data::SynthFiles,
    rev: seqex::data::SynthFiles,
    rev_dev: seqex::data::SynthFiles,
}

fn mt_data(dir: &Path, n_copy: usize, n_rev: usize) -> MtData {
    let spec = |task, n, s| SynthSpec { task, vocab_size: 13, min_len: 1, max_len: 8, n, seed: s };
    MtData {
        copy: write_synthetic(&spec(SynthTask::Copy, n_copy, 301), &dir.join("mt_copy")).unwrap(),
        rev: write_synthetic(&spec(SynthTask::Reverse, n_rev, 302), &dir.join("mt_rev")).unwrap(),
        rev_dev: write_synthetic(&spec(SynthTask::Reverse, 100, 303), &dir.join("mt_rev_dev")).unwrap(),
    }
}

fn mt_header(out: &Path, name: &str, d: &MtData, dim: usize) -> String {
    format!(
        "{name}: !Experiment
  exp_global: !ExpGlobal
    model_file: {out}/{{EXP}}.mod
    log_file: {out}/{{EXP}}.log
    default_layer_dim: {dim}
  model: !DefaultTranslator
    src_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {v}}}
",
        out = p(out),
        v = p(&d.rev.vocab),
    )
}

fn rev_eval(d: &MtData, out: &Path, model: &str) -> String {
    format!(
        "  evaluate:
  - !AccuracyEvalTask
    model: !Ref {{path: {model}}}
    src_file: {ds}
    ref_file: {dt}
    hyp_file: {out}/{{EXP}}.hyp
    eval_metrics: acc
    search_strategy: !GreedySearch {{}}
",
        ds = p(&d.rev_dev.src),
        dt = p(&d.rev_dev.trg),
        out = p(out),
    )
}

fn multitask_config(dir: &Path, d: &MtData, epochs: usize, dim: usize) -> String {
    let out = dir.join("out");
    format!(
        "{head}  train: !MultiTaskTrainingRegimen
    run_for_epochs: {epochs}
    tasks:
    - !TrainingTask
      model: !DefaultTranslator
        src_reader: !Ref {{path: model.src_reader}}
        trg_reader: !Ref {{path: model.trg_reader}}
        src_embedder: !Ref {{path: model.src_embedder}}
        encoder: !Ref {{path: model.encoder}}
      src_file: {cs}
      trg_file: {ct}
      batcher: !SrcBatcher {{batch_size: 2}}
    - !TrainingTask
      model: !Ref {{path: model}}
      src_file: {rs}
      trg_file: {rt}
      batcher: !SrcBatcher {{batch_size: 2}}
    dev_tasks:
    - !LossEvalTask
      src_file: {ds}
      ref_file: {dt}
{eval}",
        head = mt_header(&out, "multi", d, dim),
        cs = p(&d.copy.src),
        ct = p(&d.copy.trg),
        rs = p(&d.rev.src),
        rt = p(&d.rev.trg),
        ds = p(&d.rev_dev.src),
        dt = p(&d.rev_dev.trg),
        eval = rev_eval(d, &out, "model"),
    )
}

fn reverse_only_config(dir: &Path, d: &MtData, epochs: usize, dim: usize) -> String {
    let out = dir.join("out");
    format!(
        "{head}  train: !SimpleTrainingRegimen
    run_for_epochs: {epochs}
    batcher: !SrcBatcher {{batch_size: 2}}
    src_file: {rs}
    trg_file: {rt}
    dev_tasks:
    - !LossEvalTask
      src_file: {ds}
      ref_file: {dt}
{eval}",
        head = mt_header(&out, "single", d, dim),
        rs = p(&d.rev.src),
        rt = p(&d.rev.trg),
        ds = p(&d.rev_dev.src),
        dt = p(&d.rev_dev.trg),
        eval = rev_eval(d, &out, "model"),
    )
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- config

fn random_scalar(rng: &mut ChaCha8Rng) -> Scalar {
    const TRICKY: [&str; 10] = ["1", "true", "null", "~", "a: b", "- x", "x #y", "it's", "0.5", "{EXP}.log"];
    match rng.random_range(0..7) {
        0 => Scalar::Null,
        1 => Scalar::Bool(rng.random()),
        2 => Scalar::Int(rng.random()),
        3 => Scalar::Float(rng.random_range(-1e9..1e9)),
        4 => Scalar::Str(TRICKY[rng.random_range(0..TRICKY.len())].to_string()),
        _ => {
            let n = rng.random_range(0..12);
            Scalar::Str((0..n).map(|_| rng.random_range(b' '..=b'~') as char).collect())
        }
    }
}

fn word(rng: &mut ChaCha8Rng, first: std::ops::RangeInclusive<u8>, len: usize) -> String {
    let mut s = String::new();
    s.push(rng.random_range(first) as char);
    for _ in 1..len {
        s.push(rng.random_range(b'a'..=b'z') as char);
    }
    s
}

fn decorate(mut n: ConfigNode, rng: &mut ChaCha8Rng) -> ConfigNode {
    if rng.random_bool(0.3) {
        let len = rng.random_range(1..8);
        n.tag = Some(word(rng, b'A'..=b'Z', len));
    }
    if rng.random_bool(0.1) {
        let len = rng.random_range(1..5);
        n.anchor = Some(word(rng, b'a'..=b'z', len));
    }
    n
}

fn random_node(rng: &mut ChaCha8Rng, depth: usize) -> ConfigNode {
    let kind = if depth == 0 { 0 } else { rng.random_range(0..3) };
    let n = match kind {
        0 => ConfigNode::scalar(random_scalar(rng)),
        1 => {
            let mut keys = std::collections::HashSet::new();
            let mut entries = Vec::new();
            for _ in 0..rng.random_range(0..5) {
                let len = rng.random_range(1..8);
                let key = word(rng, b'a'..=b'z', len);
                if keys.insert(key.clone()) {
                    entries.push(Entry {
                        key,
                        key_loc: Loc::default(),
                        value: random_node(rng, depth - 1),
                    });
                }
            }
            ConfigNode::new(NodeKind::Mapping(entries), Loc::default())
        }
        _ => ConfigNode::sequence((0..rng.random_range(0..4)).map(|_| random_node(rng, depth - 1)).collect()),
    };
    decorate(n, rng)
}

fn random_document(rng: &mut ChaCha8Rng) -> ConfigNode {
    let n = rng.random_range(1..5);
    ConfigNode::mapping((0..n).map(|i| (format!("exp{i}"), random_node(rng, 4))))
}

fn config_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut checked = 0;
    for i in 0..50 {
        let tree = random_document(&mut rng);
        let text = serialize_config(&tree);
        let once = parse_config(&text).map_err(|e| format!("tree {i}: {e}\n{text}"))?;
        let twice = parse_config(&serialize_config(&once)).map_err(|e| format!("tree {i}: {e}"))?;
        ensure(once == tree && twice == once, || format!("tree {i} changed:\n{text}"))?;
        checked += 1;
    }
    for (name, text) in [("fig1", FIG1), ("fig2", FIG2), ("fig3", FIG3)] {
        let once = parse_config(text).map_err(|e| format!("{name}: {e}"))?;
        let twice = parse_config(&serialize_config(&once)).map_err(|e| format!("{name}: {e}"))?;
        ensure(once == twice, || format!("{name} changed"))?;
        checked += 1;
    }
    Ok(format!("{checked} documents unchanged"))
}

// ---------------------------------------------------------------- resolver

fn build_doc(text: &str) -> seqex::resolver::Experiment {
    build_single(text)
}

fn resolver_semantics() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let fig1 = build_doc(&localize(FIG1, root));
    let emb = |e: &seqex::resolver::Experiment, path: &str| {
        e.instance(path).unwrap().get::<dyn Embedder>().unwrap().emb_dim()
    };
    let (src, trg) = (emb(&fig1, "model.src_embedder"), emb(&fig1, "model.trg_embedder"));
    ensure(src == 512 && trg == 128, || format!("fig1 emb_dim src {src}, trg {trg}"))?;

    let tied_text = localize(FIG2, root);
    let tied = build_doc(&tied_text);
    let shared = tied
        .instance("model.trg_embedder")
        .unwrap()
        .same(tied.instance("model.decoder.vocab_projector").unwrap());
    ensure(shared, || "fig2 projector is a separate object".into())?;
    let untied = build_doc(
        &tied_text
            .replace("trg_embedder: !DenseWordEmbedder", "trg_embedder: !SimpleWordEmbedder")
            .replace("vocab_projector: !Ref { path: model.trg_embedder }", "mlp_hidden_dim: 128"),
    );
    let saved = untied.store.num_weights() as i64 - tied.store.num_weights() as i64;
    ensure(saved == (FIG_TRG_V * 128) as i64, || format!("tying saved {saved} weights, expected V*d = {}", FIG_TRG_V * 128))?;

    // the stored model that fig3 loads
    let standard = build_doc(&localize(FIG1, root).replace("mini_experiment", "standard"));
    save_checkpoint(&root.join("examples/output/standard.mod"), &standard.dump_spec(), &standard.store).unwrap();
    let data = root.join("examples/data");
    fs::write(data.join("head.ja"), "w1 w2 w3\nw4\n").unwrap();
    fs::write(data.join("head.en"), "w5 w6\nw7 w8\n").unwrap();
    let r = run_config(root, "fig3.yaml", &localize(FIG3, root), &RunOptions::default());
    ensure(r.status == Status::Ok, || format!("fig3: {:?}", r.status))?;
    let trained = r.log_lines.iter().any(|l| l.contains("epoch="));
    ensure(!trained, || "fig3 trained".into())?;
    let hyp = root.join("examples/output/decode_exp.test_hyp2");
    let lines = fs::read_to_string(&hyp).map(|t| t.lines().count()).unwrap_or(0);
    ensure(lines == 2, || format!("fig3 hypothesis file has {lines} lines"))?;
    Ok(format!("emb_dim 512/128; tying saves {saved} = V*d; fig3 decoded {lines} lines without training"))
}

// ---------------------------------------------------------------- gradients

struct OpCase {
    name: &'static str,
    /// Parameter shapes; `positive` asks for values in [0.5, 2].
    shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    positive: bool,
    apply: fn(&mut Graph<'_>, &[NodeId], &[ParamId], &mut ChaCha8Rng) -> Result<NodeId, TensorError>,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..4), rng.random_range(2..5))
}

fn mat(rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let (n, d) = dims(rng);
    vec![vec![n, d]]
}

fn two_mats(rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let (n, d) = dims(rng);
    vec![vec![n, d], vec![n, d]]
}

fn picks(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..d)).collect()
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: |r| {
                let (n, k, m) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
                vec![vec![n, k], vec![k, m]]
            },
            positive: false,
            apply: |g, x, _, _| g.matmul(x[0], x[1]),
        },
        OpCase {
            name: "matvec",
            shapes: |r| {
                let (n, k) = dims(r);
                vec![vec![n, k], vec![k]]
            },
            positive: false,
            apply: |g, x, _, _| g.matmul(x[0], x[1]),
        },
        OpCase {
            name: "linear",
            shapes: |r| {
                let (n, k) = dims(r);
                let m = r.random_range(1..4);
                vec![vec![n, k], vec![m, k], vec![m]]
            },
            positive: false,
            apply: |g, x, _, _| g.linear(x[0], x[1], Some(x[2])),
        },
        OpCase { name: "add", shapes: two_mats, positive: false, apply: |g, x, _, _| g.add(x[0], x[1]) },
        OpCase { name: "sub", shapes: two_mats, positive: false, apply: |g, x, _, _| g.sub(x[0], x[1]) },
        OpCase { name: "mul", shapes: two_mats, positive: false, apply: |g, x, _, _| g.mul(x[0], x[1]) },
        OpCase {
            name: "add_n",
            shapes: |r| {
                let (n, d) = dims(r);
                vec![vec![n, d]; 3]
            },
            positive: false,
            apply: |g, x, _, _| g.add_n(x),
        },
        OpCase { name: "scale", shapes: mat, positive: false, apply: |g, x, _, _| g.scale(x[0], -1.7) },
        OpCase { name: "add_scalar", shapes: mat, positive: false, apply: |g, x, _, _| g.add_scalar(x[0], 0.3) },
        OpCase { name: "tanh", shapes: mat, positive: false, apply: |g, x, _, _| g.tanh(x[0]) },
        OpCase { name: "sigmoid", shapes: mat, positive: false, apply: |g, x, _, _| g.sigmoid(x[0]) },
        OpCase { name: "exp", shapes: mat, positive: false, apply: |g, x, _, _| g.exp(x[0]) },
        OpCase { name: "log", shapes: mat, positive: true, apply: |g, x, _, _| g.log(x[0]) },
        OpCase {
            name: "scale_rows",
            shapes: |r| {
                let (n, d) = dims(r);
                vec![vec![n], vec![n, d]]
            },
            positive: false,
            apply: |g, x, _, _| g.scale_rows(x[0], x[1]),
        },
        OpCase {
            name: "concat",
            shapes: |r| {
                let (n, d) = dims(r);
                vec![vec![n, d], vec![n, r.random_range(1..4)]]
            },
            positive: false,
            apply: |g, x, _, _| g.concat(x, 1),
        },
        OpCase {
            name: "concat_rows",
            shapes: |r| {
                let (n, d) = dims(r);
                vec![vec![n, d], vec![r.random_range(1..4), d]]
            },
            positive: false,
            apply: |g, x, _, _| g.concat(x, 0),
        },
        OpCase {
            name: "slice",
            shapes: mat,
            positive: false,
            apply: |g, x, _, r| {
                let d = g.shape(x[0])[1];
                let start = r.random_range(0..d);
                let end = r.random_range(start + 1..=d);
                g.slice(x[0], 1, start, end)
            },
        },
        OpCase { name: "softmax", shapes: mat, positive: false, apply: |g, x, _, _| g.softmax(x[0]) },
        OpCase {
            name: "masked_softmax",
            shapes: mat,
            positive: false,
            apply: |g, x, _, r| {
                let (n, d) = (g.shape(x[0])[0], g.shape(x[0])[1]);
                let mut mask: Vec<bool> = (0..n * d).map(|_| r.random_bool(0.6)).collect();
                for row in 0..n {
                    mask[row * d] = true;
                }
                g.masked_softmax(x[0], &mask)
            },
        },
        OpCase { name: "log_softmax", shapes: mat, positive: false, apply: |g, x, _, _| g.log_softmax(x[0]) },
        OpCase {
            name: "pick",
            shapes: mat,
            positive: false,
            apply: |g, x, _, r| {
                let (n, d) = (g.shape(x[0])[0], g.shape(x[0])[1]);
                let p = picks(r, n, d);
                g.pick(x[0], &p)
            },
        },
        OpCase {
            name: "pick_neg_log_softmax",
            shapes: mat,
            positive: false,
            apply: |g, x, _, r| {
                let (n, d) = (g.shape(x[0])[0], g.shape(x[0])[1]);
                let p = picks(r, n, d);
                g.pick_neg_log_softmax(x[0], &p)
            },
        },
        OpCase { name: "sum", shapes: mat, positive: false, apply: |g, x, _, _| g.sum(x[0]) },
        OpCase { name: "sum_last", shapes: mat, positive: false, apply: |g, x, _, _| g.sum_last(x[0]) },
        OpCase {
            name: "lookup",
            shapes: |r| vec![vec![r.random_range(2..6), r.random_range(1..4)]],
            positive: false,
            apply: |g, _, ids, r| {
                let v = g.params().value(ids[0]).shape()[0];
                g.lookup(ids[0], r.random_range(0..v))
            },
        },
        OpCase {
            name: "lookup_rows",
            shapes: |r| vec![vec![r.random_range(2..6), r.random_range(1..4)]],
            positive: false,
            apply: |g, _, ids, r| {
                let v = g.params().value(ids[0]).shape()[0];
                let idx: Vec<usize> = (0..r.random_range(1..5)).map(|_| r.random_range(0..v)).collect();
                g.lookup_rows(ids[0], &idx)
            },
        },
    ]
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output element matters.
fn weighted_sum(g: &mut Graph<'_>, out: NodeId, rng: &mut ChaCha8Rng) -> Result<NodeId, TensorError> {
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = g.input(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn op_instance(case: &OpCase, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (case.shapes)(&mut rng);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            let data = (0..n)
                .map(|_| if case.positive { rng.random_range(0.5..2.0) } else { rng.random_range(-1.5..1.5) })
                .collect();
            store.add(format!("x{i}"), Tensor::new(s.clone(), data).unwrap()).unwrap()
        })
        .collect();
    let build_seed: u64 = rng.random();
    let apply = case.apply;
    let report = check(
        &mut store,
        |g| {
            let mut r = ChaCha8Rng::seed_from_u64(build_seed);
            let xs: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
            let out = apply(g, &xs, &ids, &mut r)?;
            weighted_sum(g, out, &mut r)
        },
        GradCheckOptions::default(),
    )
    .map_err(|e| format!("{}: {e}", case.name))?;
    Ok(report.max_rel_error())
}

/// Dropout under a fixed mask: the training graph is rebuilt from the same
/// seed for every evaluation.
fn dropout_instance(mode: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = dims(&mut rng);
    let mut store = ParamStore::new();
    let data = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let id = store.add("x", Tensor::new(vec![n, d], data).unwrap()).unwrap();
    let w: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |store: &ParamStore, grad: bool| -> (f64, Option<Tensor>) {
        let mut mask_rng = Rng::seed_from_u64(seed);
        let mut g = Graph::training(store, &mut mask_rng);
        let x = g.param(id);
        let m = match mode {
            0 => DropoutMode::Standard,
            1 => DropoutMode::Variational("v"),
            _ => DropoutMode::WordZero,
        };
        let y = g.dropout(x, 0.4, m).unwrap();
        let wn = g.input(Tensor::new(vec![n, d], w.clone()).unwrap());
        let prod = g.mul(y, wn).unwrap();
        let l = g.sum(prod).unwrap();
        let v = g.value(l).item();
        let gr = grad.then(|| g.backward(l).unwrap().dense(id, store));
        (v, gr)
    };
    let analytic = eval(&store, true).1.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n * d {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + h;
        let plus = eval(&store, false).0;
        store.value_mut(id).data_mut()[i] = orig - h;
        let minus = eval(&store, false).0;
        store.value_mut(id).data_mut()[i] = orig;
        let num = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-3));
    }
    worst
}

fn model_instance(dir: &Path, pyramidal: bool, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exp = if pyramidal {
        tiny_pyramidal(dir, 3, 2, 4, 4, seed)
    } else {
        tiny_translator(dir, 3, 4, "", seed)
    };
    let b = rng.random_range(1..4);
    let srcs: Vec<SrcSeq> = (0..b)
        .map(|_| {
            if pyramidal {
                let t = rng.random_range(1..10);
                SrcSeq::Features(Tensor::new(vec![t, 2], (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            } else {
                SrcSeq::Tokens((0..rng.random_range(1..5)).map(|_| rng.random_range(3..6)).collect())
            }
        })
        .collect();
    let trgs: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let mut t: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(3..6)).collect();
            t.push(ES);
            t
        })
        .collect();
    let s: Vec<&SrcSeq> = srcs.iter().collect();
    let t: Vec<&[usize]> = trgs.iter().map(Vec::as_slice).collect();
    let batch = Batch::new(&s, &t, (0..b).collect()).unwrap();
    let model = exp.model.clone();
    let report = check(
        &mut exp.store,
        |g| mle_loss(g, &model, &batch, 0.1).map_err(|e| TensorError::Domain { op: "mle_loss", message: e.to_string() }),
        GradCheckOptions {
            step: 1e-5,
            max_per_param: Some(4),
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(report.max_rel_error())
}

fn gradient_suite() -> Outcome {
    let tol = 1e-4;
    let mut count = 0;
    let mut worst = (0.0f64, String::new());
    let mut note = |name: String, err: f64| {
        count += 1;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name);
        }
    };
    for case in op_cases() {
        for k in 0..4 {
            note(case.name.to_string(), op_instance(&case, 1000 + k)?);
        }
    }
    for (mode, name) in ["dropout", "variational_dropout", "word_dropout"].iter().enumerate() {
        for k in 0..4 {
            note(name.to_string(), dropout_instance(mode, 2000 + k));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    for k in 0..10 {
        note("bilstm_attention_model".into(), model_instance(dir.path(), false, 3000 + k)?);
        note("pyramidal_4_layer_model".into(), model_instance(dir.path(), true, 4000 + k)?);
    }
    let (err, name) = worst;
    ensure(count >= 100 && err < tol, || format!("{count} instances, worst rel. err {err:.2e} ({name})"))?;
    Ok(format!("{count} instances, worst rel. err {err:.2e} ({name})"))
}

// ---------------------------------------------------------------- copy task

fn copy_task() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let r = run_config(dir.path(), "copy.yaml", &copy_config(dir.path(), 2, 1), &RunOptions::default());
    ensure(r.status == Status::Ok, || format!("{:?}", r.status))?;
    let greedy = r.metrics[0].value;
    let beam = r.metrics[1].value;
    let detail = format!("greedy acc {greedy:.3}, beam(5) alpha=1.5 acc {beam:.3}");
    ensure(greedy >= 0.99 && beam >= greedy, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- pyramidal

fn pyramidal_task() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = pyramid_config(dir.path(), 2, 0.5, 20, 32);
    let r = run_config(dir.path(), "asr.yaml", &text, &RunOptions::default());
    ensure(r.status == Status::Ok, || format!("{:?}", r.status))?;
    let wer = r.metric("wer").unwrap();

    // encoder output lengths over every train and dev input
    let exp = build_doc(&text);
    let halve = |t: usize| (0..2).fold(t, |t, _| t / 2 + t % 2);
    let mut inputs = 0;
    for split in ["asr_train.feat", "asr_dev.feat"] {
        let srcs = exp.model.src_reader.read_src(&dir.path().join(split)).unwrap();
        for chunk in srcs.chunks(16) {
            let s: Vec<&SrcSeq> = chunk.iter().collect();
            let b = Batch::new(&s, &[], (0..s.len()).collect()).unwrap();
            let mut g = Graph::new(&exp.store);
            let enc = exp.model.encode(&mut g, &b.src, &b.src_mask).unwrap();
            for (j, src) in chunk.iter().enumerate() {
                let got = enc.seq.mask.iter().filter(|m| m[j] > 0.0).count();
                ensure(got == halve(src.len()), || format!("input of {} frames encoded to {got}", src.len()))?;
                inputs += 1;
            }
        }
    }
    let detail = format!("dev WER {:.2}%, lengths ok on {inputs} inputs", 100.0 * wer);
    ensure(wer <= 0.05, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- multi-task

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn multitask() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = mt_data(dir.path(), 600, 200);
    let mut multi = Vec::new();
    let mut single = Vec::new();
    for seed in [1u64, 2, 3] {
        let opts = RunOptions {
            seed_override: Some(seed),
            ..RunOptions::default()
        };
        let m = run_config(dir.path(), "multi.yaml", &multitask_config(dir.path(), &d, 10, 32), &opts);
        let s = run_config(dir.path(), "single.yaml", &reverse_only_config(dir.path(), &d, 10, 32), &opts);
        ensure(m.is_ok() && s.is_ok(), || format!("{:?} / {:?}", m.status, s.status))?;
        multi.push(m.metric("acc").unwrap());
        single.push(s.metric("acc").unwrap());
    }
    let detail = format!(
        "reverse dev acc multi {multi:?} (median {:.2}) vs single {single:?} (median {:.2})",
        median(multi.clone()),
        median(single.clone())
    );
    ensure(median(multi) >= median(single), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- oracles

fn search_and_metric_oracles() -> Outcome {
    for seed in 0..20u64 {
        let t = 1 + (seed as usize % 4);
        let mut m = PrefixModel::new(3, 500 + seed, 2.0);
        let (best, lp) = exhaustive_argmax(&enumerate(&mut m, 3, t));
        let hyps = beam_search(&mut m, 3usize.pow(t as u32), t, 0.0).map_err(|e| e.to_string())?;
        ensure(hyps[0].tokens == best && (hyps[0].logprob - lp).abs() < 1e-12, || {
            format!("model {seed}: beam {:?} vs exhaustive {best:?}", hyps[0].tokens)
        })?;
    }

    let bleu = corpus_bleu(&[vec!["a", "b", "c", "d"]], &[vec!["a", "b", "c", "d", "e"]]).unwrap();
    ensure((bleu - 0.7788).abs() < 1e-4, || format!("BLEU {bleu}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..50 {
        let h: Vec<u8> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..3)).collect();
        let r: Vec<u8> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..3)).collect();
        let wer = corpus_wer(&[h.clone()], &[r.clone()]).unwrap();
        let oracle = alignment_min_edits(&h, &r) as f64 / r.len() as f64;
        ensure(wer == oracle, || format!("pair {i}: WER {wer} vs oracle {oracle}"))?;
    }

    let dir = tempfile::tempdir().unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let exp = tiny_translator(dir.path(), 2, 4, "", 600 + seed);
        let (gap, norm) = reinforce_gap(&exp, &[3, 4], &[4, ES], 0.2 * seed as f64);
        ensure(norm > 1e-6, || format!("model {seed}: vanishing policy gradient"))?;
        worst = worst.max(gap);
    }
    ensure(worst < 1e-6, || format!("REINFORCE gradient gap {worst:.2e}"))?;
    Ok(format!("20 beam/exhaustive models, BLEU {bleu:.4}, 50 WER pairs, REINFORCE gap {worst:.1e}"))
}

// ---------------------------------------------------------------- reproducibility

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = copy_config(dir.path(), 2, 9);
    let out = dir.path().join("out");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let r = run_config(dir.path(), "copy.yaml", &text, &RunOptions::default());
        ensure(r.status == Status::Ok, || format!("{:?}", r.status))?;
        runs.push((fs::read(out.join("copy.log")).unwrap(), fs::read(out.join("copy.mod/weights.txt")).unwrap()));
    }
    ensure(runs[0].0 == runs[1].0, || "logs differ".into())?;
    ensure(runs[0].1 == runs[1].1, || "weights differ".into())?;

    let trainer = Trainer::new(Optimizer::adam(0.1));
    let mut record = DevRecord::new(1).map_err(|e| e.to_string())?;
    let mut outcomes = Vec::new();
    for v in [5.0, 4.0, 4.0] {
        let o = record.record(&Score {
            metric: "loss".into(),
            value: v,
            higher_is_better: false,
        });
        if o == DevOutcome::Decay {
            trainer.set_lr(trainer.lr() * 0.5);
        }
        outcomes.push(o);
    }
    let expected = vec![DevOutcome::Improved, DevOutcome::Improved, DevOutcome::Decay];
    ensure(outcomes == expected && trainer.lr() == 0.05, || format!("{outcomes:?}, lr {}", trainer.lr()))?;
    Ok(format!(
        "logs ({} bytes) and weights ({} bytes) identical; decay on check 3 only",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("config round trip", Duration::from_secs(5), config_round_trip),
        ("resolver semantics", Duration::from_secs(10), resolver_semantics),
        ("gradient suite", Duration::from_secs(120), gradient_suite),
        ("copy-task convergence", Duration::from_secs(180), copy_task),
        ("pyramidal feature task", Duration::from_secs(300), pyramidal_task),
        ("multi-task vs single-task", Duration::from_secs(600), multitask),
        ("search and metric oracles", Duration::from_secs(60), search_and_metric_oracles),
        ("reproducibility", Duration::from_secs(180), reproducibility),
    ];
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the time budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!pass);
        println!(
            "{} {name}: {detail} [{:.1}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
