use std::rc::Rc;

use seqex_autodiff::{Graph, NodeId};

use crate::data::{PlainTextReader, InputReader, SrcBatch, Vocab};
use crate::error::{config_err, Result};
use crate::nn::attender::{AttentionCache, MlpAttender};
use crate::nn::decoder::{DecoderState, MlpSoftmaxDecoder};
use crate::nn::embedder::Embedder;
use crate::nn::transducer::{EncodedSeq, SeqTransducer};

/// Attentional encoder-decoder.
pub struct DefaultTranslator {
    pub src_reader: Rc<dyn InputReader>,
    pub trg_reader: Rc<PlainTextReader>,
    pub src_embedder: Rc<dyn Embedder>,
    pub encoder: Rc<dyn SeqTransducer>,
    pub attender: Rc<MlpAttender>,
    pub trg_embedder: Rc<dyn Embedder>,
    pub decoder: Rc<MlpSoftmaxDecoder>,
}

/// Encoder output plus the attender's precomputation.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub seq: EncodedSeq,
    pub cache: AttentionCache,
    pub batch: usize,
}

fn expect_eq(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return config_err(format!("{what}: {a} != {b}"));
    }
    Ok(())
}

impl DefaultTranslator {
    /// Wires the components together, checking every dimension.
    pub fn new(
        src_reader: Rc<dyn InputReader>,
        trg_reader: Rc<PlainTextReader>,
        src_embedder: Rc<dyn Embedder>,
        encoder: Rc<dyn SeqTransducer>,
        attender: Rc<MlpAttender>,
        trg_embedder: Rc<dyn Embedder>,
        decoder: Rc<MlpSoftmaxDecoder>,
    ) -> Result<Self> {
        expect_eq("src_embedder.emb_dim vs encoder.input_dim", src_embedder.emb_dim(), encoder.input_dim())?;
        if let (Some(v), Some(e)) = (src_reader.vocab(), src_embedder.vocab_size()) {
            expect_eq("source vocab size vs src_embedder vocab size", v.len(), e)?;
        }
        let trg_v = trg_reader.vocab.len();
        match trg_embedder.vocab_size() {
            Some(e) => expect_eq("target vocab size vs trg_embedder vocab size", trg_v, e)?,
            None => return config_err("trg_embedder must embed tokens"),
        }
        expect_eq("attender.input_dim vs encoder.hidden_dim", attender.input_dim, encoder.hidden_dim())?;
        expect_eq("attender.state_dim vs decoder.hidden_dim", attender.state_dim, decoder.hidden_dim)?;
        expect_eq("decoder.input_dim vs encoder.hidden_dim", decoder.input_dim, encoder.hidden_dim())?;
        expect_eq("decoder.trg_embed_dim vs trg_embedder.emb_dim", decoder.trg_embed_dim, trg_embedder.emb_dim())?;
        expect_eq("decoder vocab size vs target vocab size", decoder.vocab_size, trg_v)?;
        decoder.bridge.check_encoder(encoder.hidden_dim(), encoder.layers())?;
        Ok(Self {
            src_reader,
            trg_reader,
            src_embedder,
            encoder,
            attender,
            trg_embedder,
            decoder,
        })
    }

    pub fn trg_vocab(&self) -> &Vocab {
        &self.trg_reader.vocab
    }

    pub fn encode(&self, g: &mut Graph<'_>, src: &SrcBatch, mask: &[Vec<f64>]) -> Result<Encoded> {
        let xs = match src {
            SrcBatch::Tokens(steps) => steps
                .iter()
                .map(|ids| self.src_embedder.embed_tokens(g, ids))
                .collect::<Result<Vec<_>>>()?,
            SrcBatch::Features(frames) => frames
                .iter()
                .map(|f| self.src_embedder.embed_features(g, f))
                .collect::<Result<Vec<_>>>()?,
        };
        let batch = mask.first().map_or(0, Vec::len);
        let seq = self.encoder.transduce(g, &xs, mask)?;
        let cache = self.attender.prepare(g, &seq)?;
        Ok(Encoded { seq, cache, batch })
    }

    pub fn initial_state(&self, g: &mut Graph<'_>, enc: &Encoded) -> Result<DecoderState> {
        self.decoder.initial_state(g, &enc.seq, enc.batch)
    }

    /// Feeds `prev` (`[B]` ids) and returns the next state and `[B, V]`
    /// logits.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        enc: &Encoded,
        state: &DecoderState,
        prev: &[usize],
    ) -> Result<(DecoderState, NodeId)> {
        let emb = self.trg_embedder.embed_tokens(g, prev)?;
        self.decoder.step(g, state, emb, &self.attender, &enc.cache)
    }
}
