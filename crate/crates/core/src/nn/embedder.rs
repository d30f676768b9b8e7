use seqex_autodiff::{DropoutMode, Graph, NodeId, ParamId, ParamStore, Rng, Tensor};

use crate::error::{config_err, Result};

/// Maps source or target symbols to vectors, one time step at a time.
pub trait Embedder {
    fn emb_dim(&self) -> usize;

    /// Vocabulary size for token embedders.
    fn vocab_size(&self) -> Option<usize>;

    /// `[B]` ids to `[B, emb_dim]`.
    fn embed_tokens(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<NodeId>;

    /// A `[B, d]` feature frame to `[B, emb_dim]`.
    fn embed_features(&self, _g: &mut Graph<'_>, _frame: &Tensor) -> Result<NodeId> {
        config_err("this embedder does not accept feature input")
    }
}

/// Maps a hidden vector to logits over a vocabulary.
pub trait Projector {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn project(&self, g: &mut Graph<'_>, h: NodeId) -> Result<NodeId>;
}

const EMBED_INIT: f64 = 0.1;

fn check_rate(word_dropout: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&word_dropout) {
        return config_err(format!("word_dropout must be in [0, 1], got {word_dropout}"));
    }
    Ok(())
}

fn embed_rows(g: &mut Graph<'_>, table: ParamId, ids: &[usize], word_dropout: f64) -> Result<NodeId> {
    let x = g.lookup_rows(table, ids)?;
    Ok(g.dropout(x, word_dropout, DropoutMode::WordZero)?)
}

/// A `V × d` lookup table.
#[derive(Debug)]
pub struct SimpleWordEmbedder {
    pub table: ParamId,
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub word_dropout: f64,
}

impl SimpleWordEmbedder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        vocab_size: usize,
        emb_dim: usize,
        word_dropout: f64,
    ) -> Result<Self> {
        check_rate(word_dropout)?;
        let table = store.add_uniform(format!("{path}.E"), &[vocab_size, emb_dim], EMBED_INIT, rng)?;
        Ok(Self {
            table,
            vocab_size,
            emb_dim,
            word_dropout,
        })
    }
}

impl Embedder for SimpleWordEmbedder {
    fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.vocab_size)
    }

    fn embed_tokens(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<NodeId> {
        embed_rows(g, self.table, ids, self.word_dropout)
    }
}

/// A lookup table that doubles as an output projection:
/// `embed(i) = E[i]`, `project(h) = E·h + b_out`.
#[derive(Debug)]
pub struct DenseWordEmbedder {
    pub table: ParamId,
    pub bias: ParamId,
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub word_dropout: f64,
}

impl DenseWordEmbedder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        vocab_size: usize,
        emb_dim: usize,
        word_dropout: f64,
    ) -> Result<Self> {
        check_rate(word_dropout)?;
        let table = store.add_uniform(format!("{path}.E"), &[vocab_size, emb_dim], EMBED_INIT, rng)?;
        let bias = store.add_zeros(format!("{path}.b_out"), &[vocab_size])?;
        Ok(Self {
            table,
            bias,
            vocab_size,
            emb_dim,
            word_dropout,
        })
    }
}

impl Embedder for DenseWordEmbedder {
    fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.vocab_size)
    }

    fn embed_tokens(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<NodeId> {
        embed_rows(g, self.table, ids, self.word_dropout)
    }
}

impl Projector for DenseWordEmbedder {
    fn input_dim(&self) -> usize {
        self.emb_dim
    }

    fn output_dim(&self) -> usize {
        self.vocab_size
    }

    fn project(&self, g: &mut Graph<'_>, h: NodeId) -> Result<NodeId> {
        let (e, b) = (g.param(self.table), g.param(self.bias));
        Ok(g.linear(h, e, Some(b))?)
    }
}

/// Passes feature frames through unchanged.
#[derive(Debug)]
pub struct NoopEmbedder {
    pub emb_dim: usize,
}

impl Embedder for NoopEmbedder {
    fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    fn vocab_size(&self) -> Option<usize> {
        None
    }

    fn embed_tokens(&self, _g: &mut Graph<'_>, _ids: &[usize]) -> Result<NodeId> {
        config_err("NoopEmbedder only accepts feature input")
    }

    fn embed_features(&self, g: &mut Graph<'_>, frame: &Tensor) -> Result<NodeId> {
        if frame.shape()[1] != self.emb_dim {
            return config_err(format!(
                "feature dim {} does not match emb_dim {}",
                frame.shape()[1],
                self.emb_dim
            ));
        }
        Ok(g.input(frame.clone()))
    }
}
