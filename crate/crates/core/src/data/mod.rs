//! Vocabularies, corpus readers, batching and synthetic data.

mod batch;
mod corpus;
mod reader;
mod synth;
mod vocab;

pub use batch::{sort_and_chunk, src_batcher, Batch, SrcBatch, SrcBatcher};
pub use corpus::{format_features, read_features, read_lines, read_plaintext, SrcSeq};
pub use reader::{FeatureReader, InputReader, PlainTextReader};
pub use synth::{
    gen_features, gen_pairs, token_name, write_feature_task, write_synthetic, FeatureSpec,
    SynthFiles, SynthSpec, SynthTask,
};
pub use vocab::{Vocab, ES, ES_STR, SS, SS_STR, UNK, UNK_STR};
