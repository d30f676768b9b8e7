use std::rc::Rc;

use seqex_autodiff::{DropoutMode, Graph, NodeId, ParamId, ParamStore, Rng};

use crate::error::{config_err, Result};
use crate::nn::attender::{AttentionCache, MlpAttender};
use crate::nn::bridge::Bridge;
use crate::nn::embedder::Projector;
use crate::nn::lstm::{zeros, LstmParams};
use crate::nn::transducer::EncodedSeq;

/// Recurrent state between decoder steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    /// Per-layer `(h, c)`, each `[B, hidden_dim]`.
    pub layers: Vec<(NodeId, NodeId)>,
    /// Attention context of the previous step, fed into the next input.
    pub context: NodeId,
}

#[derive(Debug)]
enum Output {
    Own { w: ParamId, b: ParamId },
    Shared,
}

/// Attentional LSTM decoder with input feeding. Each step reads
/// `[prev embedding; prev context]`, attends with the top hidden state,
/// and scores `projection(tanh(W·[h; context] + b))`.
pub struct MlpSoftmaxDecoder {
    pub lstm: Vec<LstmParams>,
    pub mlp_w: ParamId,
    pub mlp_b: ParamId,
    output: Output,
    projector: Option<Rc<dyn Projector>>,
    pub bridge: Rc<dyn Bridge>,
    pub input_dim: usize,
    pub trg_embed_dim: usize,
    pub hidden_dim: usize,
    pub mlp_hidden_dim: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    path: String,
}

pub struct DecoderConfig {
    /// Encoder state (context) dim.
    pub input_dim: usize,
    pub trg_embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub mlp_hidden_dim: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl MlpSoftmaxDecoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        cfg: DecoderConfig,
        bridge: Rc<dyn Bridge>,
        projector: Option<Rc<dyn Projector>>,
    ) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden_dim == 0 || cfg.mlp_hidden_dim == 0 {
            return config_err("decoder layers and dims must be positive");
        }
        if bridge.dec_dim() != cfg.hidden_dim || bridge.dec_layers() != cfg.layers {
            return config_err(format!(
                "bridge produces {} layer(s) of dim {} but decoder has {} of dim {}",
                bridge.dec_layers(),
                bridge.dec_dim(),
                cfg.layers,
                cfg.hidden_dim
            ));
        }
        let lstm = (0..cfg.layers)
            .map(|l| {
                let in_dim = if l == 0 { cfg.trg_embed_dim + cfg.input_dim } else { cfg.hidden_dim };
                LstmParams::new(store, rng, &format!("{path}.l{l}"), in_dim, cfg.hidden_dim)
            })
            .collect::<Result<_>>()?;
        let mlp_w = store.add_glorot(format!("{path}.W_mlp"), cfg.mlp_hidden_dim, cfg.hidden_dim + cfg.input_dim, rng)?;
        let mlp_b = store.add_zeros(format!("{path}.b_mlp"), &[cfg.mlp_hidden_dim])?;
        let output = match &projector {
            Some(p) => {
                if p.input_dim() != cfg.mlp_hidden_dim {
                    return config_err(format!(
                        "vocab_projector expects dim {} but mlp_hidden_dim is {}",
                        p.input_dim(),
                        cfg.mlp_hidden_dim
                    ));
                }
                if p.output_dim() != cfg.vocab_size {
                    return config_err(format!(
                        "vocab_projector has {} outputs but the target vocab has {}",
                        p.output_dim(),
                        cfg.vocab_size
                    ));
                }
                Output::Shared
            }
            None => Output::Own {
                w: store.add_glorot(format!("{path}.W_out"), cfg.vocab_size, cfg.mlp_hidden_dim, rng)?,
                b: store.add_zeros(format!("{path}.b_out"), &[cfg.vocab_size])?,
            },
        };
        Ok(Self {
            lstm,
            mlp_w,
            mlp_b,
            output,
            projector,
            bridge,
            input_dim: cfg.input_dim,
            trg_embed_dim: cfg.trg_embed_dim,
            hidden_dim: cfg.hidden_dim,
            mlp_hidden_dim: cfg.mlp_hidden_dim,
            vocab_size: cfg.vocab_size,
            dropout: cfg.dropout,
            path: path.to_string(),
        })
    }

    pub fn layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn projector(&self) -> Option<&Rc<dyn Projector>> {
        self.projector.as_ref()
    }

    pub fn initial_state(&self, g: &mut Graph<'_>, enc: &EncodedSeq, batch: usize) -> Result<DecoderState> {
        let layers = self.bridge.initial(g, enc, batch)?;
        Ok(DecoderState {
            layers,
            context: zeros(g, batch, self.input_dim),
        })
    }

    /// One step; returns the next state and `[B, V]` logits.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        state: &DecoderState,
        prev_emb: NodeId,
        attender: &MlpAttender,
        cache: &AttentionCache,
    ) -> Result<(DecoderState, NodeId)> {
        let mut x = g.concat(&[prev_emb, state.context], 1)?;
        let mut layers = Vec::with_capacity(self.lstm.len());
        for (l, (p, &(h, c))) in self.lstm.iter().zip(&state.layers).enumerate() {
            let xd = g.dropout(x, self.dropout, DropoutMode::Variational(&format!("{}.l{l}.x", self.path)))?;
            let hd = g.dropout(h, self.dropout, DropoutMode::Variational(&format!("{}.l{l}.h", self.path)))?;
            let (h_new, c_new) = p.step(g, xd, hd, c)?;
            layers.push((h_new, c_new));
            x = h_new;
        }
        let (_, context) = attender.attend(g, cache, x)?;
        let hc = g.concat(&[x, context], 1)?;
        let (w, b) = (g.param(self.mlp_w), g.param(self.mlp_b));
        let pre = g.linear(hc, w, Some(b))?;
        let mlp = g.tanh(pre)?;
        let logits = match (&self.output, &self.projector) {
            (Output::Own { w, b }, _) => {
                let (w, b) = (g.param(*w), g.param(*b));
                g.linear(mlp, w, Some(b))?
            }
            (Output::Shared, Some(p)) => p.project(g, mlp)?,
            (Output::Shared, None) => unreachable!("shared output without projector"),
        };
        Ok((DecoderState { layers, context }, logits))
    }
}
