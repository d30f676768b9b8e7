use seqex_autodiff::{Graph, NodeId, ParamId, ParamStore, Rng};

use crate::error::{config_err, Result};
use crate::nn::transducer::EncodedSeq;

/// MLP attention: `e_j = vᵀ·tanh(W_h·h_j + W_s·s + b)`, weights are the
/// softmax of `e` over unmasked positions, and the context is the weighted
/// sum of encoder states.
#[derive(Debug)]
pub struct MlpAttender {
    pub w_h: ParamId,
    pub w_s: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    pub input_dim: usize,
    pub state_dim: usize,
    pub hidden_dim: usize,
}

/// Per-sequence precomputation of `W_h·h_j`.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    proj: Vec<NodeId>,
    states: Vec<NodeId>,
    /// Batch-major `[B * T]` validity flags.
    mask: Vec<bool>,
}

impl MlpAttender {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        path: &str,
        input_dim: usize,
        state_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || state_dim == 0 || hidden_dim == 0 {
            return config_err("attender dimensions must be positive");
        }
        Ok(Self {
            w_h: store.add_glorot(format!("{path}.W_h"), hidden_dim, input_dim, rng)?,
            w_s: store.add_glorot(format!("{path}.W_s"), hidden_dim, state_dim, rng)?,
            b: store.add_zeros(format!("{path}.b"), &[hidden_dim])?,
            v: store.add_glorot(format!("{path}.v"), 1, hidden_dim, rng)?,
            input_dim,
            state_dim,
            hidden_dim,
        })
    }

    pub fn prepare(&self, g: &mut Graph<'_>, enc: &EncodedSeq) -> Result<AttentionCache> {
        if enc.is_empty() {
            return config_err("cannot attend over an empty sequence");
        }
        let dim = g.shape(enc.states[0])[1];
        if dim != self.input_dim {
            return config_err(format!("attender input_dim {} but encoder states have dim {dim}", self.input_dim));
        }
        let w_h = g.param(self.w_h);
        let proj = enc
            .states
            .iter()
            .map(|&h| g.linear(h, w_h, None))
            .collect::<Result<Vec<_>, _>>()?;
        let (t_len, batch) = (enc.len(), enc.mask[0].len());
        let mut mask = vec![false; batch * t_len];
        for (t, m) in enc.mask.iter().enumerate() {
            for (b, &v) in m.iter().enumerate() {
                mask[b * t_len + t] = v > 0.0;
            }
        }
        Ok(AttentionCache {
            proj,
            states: enc.states.clone(),
            mask,
        })
    }

    /// Returns `([B, T]` weights, `[B, input_dim]` context).
    pub fn attend(&self, g: &mut Graph<'_>, cache: &AttentionCache, state: NodeId) -> Result<(NodeId, NodeId)> {
        let (w_s, b, v) = (g.param(self.w_s), g.param(self.b), g.param(self.v));
        let s = g.linear(state, w_s, Some(b))?;
        let mut scores = Vec::with_capacity(cache.proj.len());
        for &p in &cache.proj {
            let sum = g.add(p, s)?;
            let act = g.tanh(sum)?;
            scores.push(g.linear(act, v, None)?);
        }
        let e = g.concat(&scores, 1)?;
        let weights = g.masked_softmax(e, &cache.mask)?;
        let t_len = cache.states.len();
        let mut parts = Vec::with_capacity(t_len);
        for (t, &h) in cache.states.iter().enumerate() {
            let w = if t_len == 1 { weights } else { g.slice(weights, 1, t, t + 1)? };
            parts.push(g.scale_rows(w, h)?);
        }
        let context = g.add_n(&parts)?;
        Ok((weights, context))
    }
}
