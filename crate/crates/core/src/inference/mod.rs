//! Decoding and evaluation.

mod metrics;
mod search;
mod tasks;

pub use metrics::{corpus_bleu, corpus_wer, edit_distance, sentence_bleu_plus1, sequence_accuracy, Metric};
pub use search::{
    beam_search, default_max_len, greedy_search, normalize_score, sample, sample_index, Hypothesis, SearchStrategy,
    StepScorer,
};
pub use tasks::{decode_corpus, eval_loss, AccuracyEvalTask, EvalTask, LossEvalTask, Score, TranslatorScorer};
