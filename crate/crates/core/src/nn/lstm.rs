//! LSTM cell shared by encoders and the decoder.
//!
//! Gates follow the standard formulation with no peepholes:
//! `[i f o g] = W_x·x + W_h·h + b`, `c' = σ(f)⊙c + σ(i)⊙tanh(g)`,
//! `h' = σ(o)⊙tanh(c')`. All biases, the forget gate's included, start at 0.

use seqex_autodiff::{DropoutMode, Graph, NodeId, ParamId, ParamStore, Rng, Tensor};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            wx: store.add_glorot(format!("{prefix}.Wx"), 4 * hidden, in_dim, rng)?,
            wh: store.add_glorot(format!("{prefix}.Wh"), 4 * hidden, hidden, rng)?,
            b: store.add_zeros(format!("{prefix}.b"), &[4 * hidden])?,
            in_dim,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        let gx = g.linear(x, wx, Some(b))?;
        let gh = g.linear(h, wh, None)?;
        let gates = g.add(gx, gh)?;
        let n = self.hidden;
        let i = g.slice(gates, 1, 0, n)?;
        let f = g.slice(gates, 1, n, 2 * n)?;
        let o = g.slice(gates, 1, 2 * n, 3 * n)?;
        let cand = g.slice(gates, 1, 3 * n, 4 * n)?;
        let (i, f, o, cand) = (g.sigmoid(i)?, g.sigmoid(f)?, g.sigmoid(o)?, g.tanh(cand)?);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new)?;
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

pub(crate) fn all_ones(mask: &[f64]) -> bool {
    mask.iter().all(|&m| m == 1.0)
}

pub(crate) fn zeros(g: &mut Graph<'_>, rows: usize, dim: usize) -> NodeId {
    g.input(Tensor::zeros(&[rows, dim]))
}

/// `m·new + (1 − m)·prev` per batch row; `new` itself when nothing is
/// masked.
pub(crate) fn masked_update(g: &mut Graph<'_>, mask: &[f64], new: NodeId, prev: NodeId) -> Result<NodeId> {
    if all_ones(mask) {
        return Ok(new);
    }
    let m = g.input(Tensor::vector(mask.to_vec()));
    let inv = g.input(Tensor::vector(mask.iter().map(|v| 1.0 - v).collect()));
    let a = g.scale_rows(m, new)?;
    let b = g.scale_rows(inv, prev)?;
    Ok(g.add(a, b)?)
}

/// Zeroes masked rows of `x`.
pub(crate) fn apply_mask(g: &mut Graph<'_>, mask: &[f64], x: NodeId) -> Result<NodeId> {
    if all_ones(mask) {
        return Ok(x);
    }
    let m = g.input(Tensor::vector(mask.to_vec()));
    Ok(g.scale_rows(m, x)?)
}

/// Final `(h, c)` plus the hidden state at every position.
pub struct LstmRun {
    pub outputs: Vec<NodeId>,
    pub last: (NodeId, NodeId),
}

/// Runs one direction over `xs` (`[B, in]` each). Padded positions carry
/// the previous state through unchanged, so the final state is the state
/// at each sequence's real end. `dropout` is variational, keyed by
/// `drop_id`, on both the input and the recurrent state.
pub fn run_lstm(
    g: &mut Graph<'_>,
    p: &LstmParams,
    xs: &[NodeId],
    mask: &[Vec<f64>],
    reverse: bool,
    dropout: f64,
    drop_id: &str,
) -> Result<LstmRun> {
    let batch = g.shape(xs[0])[0];
    let mut h = zeros(g, batch, p.hidden);
    let mut c = zeros(g, batch, p.hidden);
    let mut outputs = vec![h; xs.len()];
    let x_id = format!("{drop_id}.x");
    let h_id = format!("{drop_id}.h");
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..xs.len()).rev())
    } else {
        Box::new(0..xs.len())
    };
    for t in order {
        let x = g.dropout(xs[t], dropout, DropoutMode::Variational(&x_id))?;
        let hd = g.dropout(h, dropout, DropoutMode::Variational(&h_id))?;
        let (h_new, c_new) = p.step(g, x, hd, c)?;
        h = masked_update(g, &mask[t], h_new, h)?;
        c = masked_update(g, &mask[t], c_new, c)?;
        outputs[t] = h;
    }
    Ok(LstmRun {
        outputs,
        last: (h, c),
    })
}
