//! Model components: embedders, encoders, attention, bridges, decoder.

mod attender;
mod bridge;
mod decoder;
mod embedder;
mod lstm;
mod transducer;
mod translator;

pub use attender::{AttentionCache, MlpAttender};
pub use bridge::{Bridge, CopyBridge, NoBridge};
pub use decoder::{DecoderConfig, DecoderState, MlpSoftmaxDecoder};
pub use embedder::{DenseWordEmbedder, Embedder, NoopEmbedder, Projector, SimpleWordEmbedder};
pub use lstm::{run_lstm, LstmParams, LstmRun};
pub use transducer::{
    pyramid_len, BiLstmLayer, BiLstmSeqTransducer, EncodedSeq, PyramidalLstmSeqTransducer, SeqTransducer,
};
pub use translator::{DefaultTranslator, Encoded};
