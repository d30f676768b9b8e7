#![allow(dead_code)]
pub mod toy;

use std::path::{Path, PathBuf};

use seqex::data::{write_synthetic, SynthFiles, SynthSpec, SynthTask};

pub fn synth(dir: &Path, name: &str, task: SynthTask, vocab_size: usize, lens: (usize, usize), n: usize, seed: u64) -> SynthFiles {
    write_synthetic(
        &SynthSpec {
            task,
            vocab_size,
            min_len: lens.0,
            max_len: lens.1,
            n,
            seed,
        },
        &dir.join(name),
    )
    .unwrap()
}

/// Train/dev copy splits sharing one vocab.
pub struct Splits {
    pub train: SynthFiles,
    pub dev: SynthFiles,
}

pub fn splits(dir: &Path, task: SynthTask, vocab_size: usize, lens: (usize, usize), n_train: usize, n_dev: usize) -> Splits {
    Splits {
        train: synth(dir, "train", task, vocab_size, lens, n_train, 11),
        dev: synth(dir, "dev", task, vocab_size, lens, n_dev, 12),
    }
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// A small single-task experiment in config syntax, indented to sit
/// under a top-level name.
pub fn tiny_experiment(out: &Path, s: &Splits, dim: usize, epochs: usize, seed: u64) -> String {
    format!(
        r#"!Experiment
  exp_global: !ExpGlobal
    model_file: {out}/{{EXP}}.mod
    log_file: {out}/{{EXP}}.log
    default_layer_dim: {dim}
    seed: {seed}
  model: !DefaultTranslator
    src_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {vocab}}}
    trg_reader: !PlainTextReader
      vocab: !Vocab {{vocab_file: {vocab}}}
  train: !SimpleTrainingRegimen
    run_for_epochs: {epochs}
    batcher: !SrcBatcher {{batch_size: 8}}
    src_file: {tsrc}
    trg_file: {ttrg}
    dev_tasks:
    - !LossEvalTask
      src_file: {dsrc}
      ref_file: {dtrg}
  evaluate:
  - !AccuracyEvalTask
    src_file: {dsrc}
    ref_file: {dtrg}
    hyp_file: {out}/{{EXP}}.hyp
    eval_metrics: acc,bleu
"#,
        out = p(out),
        vocab = p(&s.train.vocab),
        tsrc = p(&s.train.src),
        ttrg = p(&s.train.trg),
        dsrc = p(&s.dev.src),
        dtrg = p(&s.dev.trg),
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.yaml");
    std::fs::write(&path, text).unwrap();
    path
}

pub const FIG1: &str = include_str!("../../../config/tests/fixtures/fig1.yaml");
pub const FIG2: &str = include_str!("../../../config/tests/fixtures/fig2.yaml");
pub const FIG3: &str = include_str!("../../../config/tests/fixtures/fig3.yaml");

pub const FIG_SRC_V: usize = 27;
pub const FIG_TRG_V: usize = 19;

/// A figure document with `examples/` moved under `root`, plus the vocab
/// files it names.
pub fn localize(text: &str, root: &Path) -> String {
    let data = root.join("examples/data");
    std::fs::create_dir_all(&data).unwrap();
    let vocab = |n: usize| (0..n - 3).map(|i| format!("w{i}\n")).collect::<String>();
    std::fs::write(data.join("train.ja.vocab"), vocab(FIG_SRC_V)).unwrap();
    std::fs::write(data.join("train.en.vocab"), vocab(FIG_TRG_V)).unwrap();
    text.replace("examples/", &format!("{}/examples/", root.display()))
}
