//! Bidirectional and pyramidal LSTM encoders.

use seqex_autodiff::{Graph, NodeId, ParamStore, Rng};

use crate::error::{config_err, Result};
use crate::nn::lstm::{apply_mask, run_lstm, zeros, LstmParams};

/// Encoder output: one `[B, H]` state per (possibly subsampled) position,
/// the matching `[T'][B]` mask, and per-layer final `(h, c)`.
#[derive(Debug, Clone)]
pub struct EncodedSeq {
    pub states: Vec<NodeId>,
    pub mask: Vec<Vec<f64>>,
    pub final_states: Vec<(NodeId, NodeId)>,
}

impl EncodedSeq {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub trait SeqTransducer {
    fn input_dim(&self) -> usize;
    /// Output dim, also the size of each final state.
    fn hidden_dim(&self) -> usize;
    fn layers(&self) -> usize;
    fn transduce(&self, g: &mut Graph<'_>, xs: &[NodeId], mask: &[Vec<f64>]) -> Result<EncodedSeq>;
}

/// One bidirectional layer; each direction has `hidden / 2` units.
#[derive(Debug)]
pub struct BiLstmLayer {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmLayer {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: LstmParams::new(store, rng, &format!("{prefix}.fwd"), in_dim, hidden / 2)?,
            bwd: LstmParams::new(store, rng, &format!("{prefix}.bwd"), in_dim, hidden / 2)?,
        })
    }

    fn run(
        &self,
        g: &mut Graph<'_>,
        xs: &[NodeId],
        mask: &[Vec<f64>],
        dropout: f64,
        prefix: &str,
    ) -> Result<(Vec<NodeId>, (NodeId, NodeId))> {
        let f = run_lstm(g, &self.fwd, xs, mask, false, dropout, &format!("{prefix}.fwd"))?;
        let b = run_lstm(g, &self.bwd, xs, mask, true, dropout, &format!("{prefix}.bwd"))?;
        let mut outs = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let cat = g.concat(&[f.outputs[t], b.outputs[t]], 1)?;
            outs.push(apply_mask(g, &mask[t], cat)?);
        }
        let h = g.concat(&[f.last.0, b.last.0], 1)?;
        let c = g.concat(&[f.last.1, b.last.1], 1)?;
        Ok((outs, (h, c)))
    }
}

fn check_dims(input_dim: usize, hidden_dim: usize, layers: usize) -> Result<()> {
    if hidden_dim == 0 || hidden_dim % 2 != 0 {
        return config_err(format!("hidden_dim must be even and positive, got {hidden_dim}"));
    }
    if layers == 0 || input_dim == 0 {
        return config_err("layers and input_dim must be positive");
    }
    Ok(())
}

fn check_input(g: &Graph<'_>, xs: &[NodeId], mask: &[Vec<f64>], input_dim: usize) -> Result<()> {
    if xs.is_empty() {
        return config_err("cannot encode an empty sequence");
    }
    if mask.len() != xs.len() {
        return config_err(format!("{} inputs but {} mask steps", xs.len(), mask.len()));
    }
    let shape = g.shape(xs[0]);
    if shape.len() != 2 || shape[1] != input_dim {
        return config_err(format!("encoder expects [B, {input_dim}] inputs, got {shape:?}"));
    }
    Ok(())
}

/// Stacked bidirectional LSTM; output dim equals `hidden_dim`.
#[derive(Debug)]
pub struct BiLstmSeqTransducer {
    pub layers: Vec<BiLstmLayer>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    path: String,
}

impl BiLstmSeqTransducer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        dropout: f64,
    ) -> Result<Self> {
        check_dims(input_dim, hidden_dim, layers)?;
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                BiLstmLayer::new(store, rng, &format!("{path}.l{l}"), in_dim, hidden_dim)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            input_dim,
            hidden_dim,
            dropout,
            path: path.to_string(),
        })
    }
}

impl SeqTransducer for BiLstmSeqTransducer {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn layers(&self) -> usize {
        self.layers.len()
    }

    fn transduce(&self, g: &mut Graph<'_>, xs: &[NodeId], mask: &[Vec<f64>]) -> Result<EncodedSeq> {
        check_input(g, xs, mask, self.input_dim)?;
        let mut cur = xs.to_vec();
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (outs, fin) = layer.run(g, &cur, mask, self.dropout, &format!("{}.l{l}", self.path))?;
            cur = outs;
            finals.push(fin);
        }
        Ok(EncodedSeq {
            states: cur,
            mask: mask.to_vec(),
            final_states: finals,
        })
    }
}

/// Output length after one pyramid layer: `ceil(t / 2)`.
pub fn pyramid_len(t: usize) -> usize {
    t.div_ceil(2)
}

/// Bidirectional LSTM stack where every layer above the first reads
/// concatenated pairs of adjacent outputs of the layer below, halving the
/// sequence length. An odd-length sequence is padded with a zero frame.
#[derive(Debug)]
pub struct PyramidalLstmSeqTransducer {
    pub layers: Vec<BiLstmLayer>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    path: String,
}

impl PyramidalLstmSeqTransducer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        dropout: f64,
    ) -> Result<Self> {
        check_dims(input_dim, hidden_dim, layers)?;
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
                BiLstmLayer::new(store, rng, &format!("{path}.l{l}"), in_dim, hidden_dim)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            input_dim,
            hidden_dim,
            dropout,
            path: path.to_string(),
        })
    }
}

impl SeqTransducer for PyramidalLstmSeqTransducer {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn layers(&self) -> usize {
        self.layers.len()
    }

    fn transduce(&self, g: &mut Graph<'_>, xs: &[NodeId], mask: &[Vec<f64>]) -> Result<EncodedSeq> {
        check_input(g, xs, mask, self.input_dim)?;
        let batch = g.shape(xs[0])[0];
        let mut cur = xs.to_vec();
        let mut cur_mask = mask.to_vec();
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                let mut paired = Vec::with_capacity(pyramid_len(cur.len()));
                let mut paired_mask = Vec::with_capacity(paired.capacity());
                for t in (0..cur.len()).step_by(2) {
                    let second = match cur.get(t + 1) {
                        Some(&n) => n,
                        None => zeros(g, batch, self.hidden_dim),
                    };
                    paired.push(g.concat(&[cur[t], second], 1)?);
                    paired_mask.push(cur_mask[t].clone());
                }
                cur = paired;
                cur_mask = paired_mask;
            }
            let (outs, fin) = layer.run(g, &cur, &cur_mask, self.dropout, &format!("{}.l{l}", self.path))?;
            cur = outs;
            finals.push(fin);
        }
        Ok(EncodedSeq {
            states: cur,
            mask: cur_mask,
            final_states: finals,
        })
    }
}
