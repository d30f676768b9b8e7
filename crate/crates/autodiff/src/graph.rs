//! Append-only compute graph with reverse-mode differentiation.
//!
//! Node ids are handed out in creation order, so creation order is a
//! topological order and backward is a single reverse sweep. Every forward
//! op validates shapes and rejects non-finite results.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::TensorError;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Rng;

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Lookup { param: ParamId, rows: Vec<usize> },
    MatMul(NodeId, NodeId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    ScaleRows { w: NodeId, x: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick { x: NodeId, picks: Vec<usize> },
    PickNegLogSoftmax { x: NodeId, picks: Vec<usize> },
    Sum(NodeId),
    SumLast(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
}

/// How [`Graph::dropout`] draws its mask.
#[derive(Debug, Clone, Copy)]
pub enum DropoutMode<'k> {
    /// Fresh iid Bernoulli keep-mask, scaled by `1 / (1 - rate)`.
    Standard,
    /// One mask per id for the lifetime of the graph, so every time step
    /// of a sequence sees the same mask.
    Variational(&'k str),
    /// Zeroes each whole row (one token vector) with probability `rate`,
    /// without rescaling.
    WordZero,
}

struct DropoutState<'a> {
    rng: &'a mut Rng,
    masks: HashMap<String, Tensor>,
}

pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    train: Option<DropoutState<'a>>,
    grads: Vec<Option<Tensor>>,
}

impl<'a> Graph<'a> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            train: None,
            grads: Vec::new(),
        }
    }

    /// Training graph: dropout masks are drawn from `rng`.
    pub fn training(params: &'a ParamStore, rng: &'a mut Rng) -> Self {
        let mut g = Self::new(params);
        g.train = Some(DropoutState {
            rng,
            masks: HashMap::new(),
        });
        g
    }

    pub fn is_training(&self) -> bool {
        self.train.is_some()
    }

    /// The training PRNG, if this is a training graph.
    pub fn rng(&mut self) -> Option<&mut Rng> {
        self.train.as_mut().map(|t| &mut *t.rng)
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    /// Gradient of the last backward pass with respect to a node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A constant input. Panics on non-finite data.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        assert!(value.is_finite(), "non-finite constant");
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    /// Row `idx` of a `[V, d]` table, as a `[d]` vector.
    pub fn lookup(&mut self, table: ParamId, idx: usize) -> Result<NodeId> {
        let t = self.params.value(table);
        let d = t.shape()[1];
        let v = self.lookup_rows_value(table, &[idx])?;
        self.push(
            Op::Lookup {
                param: table,
                rows: vec![idx],
            },
            v.reshape(vec![d])?,
            "lookup",
        )
    }

    /// Rows of a `[V, d]` table stacked into `[n, d]`.
    pub fn lookup_rows(&mut self, table: ParamId, idx: &[usize]) -> Result<NodeId> {
        let v = self.lookup_rows_value(table, idx)?;
        self.push(
            Op::Lookup {
                param: table,
                rows: idx.to_vec(),
            },
            v,
            "lookup",
        )
    }

    fn lookup_rows_value(&self, table: ParamId, idx: &[usize]) -> Result<Tensor> {
        let t = self.params.value(table);
        if t.rank() != 2 {
            return Err(TensorError::Domain {
                op: "lookup",
                message: format!("table must be rank 2, got {:?}", t.shape()),
            });
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "lookup",
                    index: i,
                    bound: v,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        Tensor::new(vec![idx.len(), d], data)
    }

    /// Matrix product `[m, k] · [k, n]` or matrix-vector `[m, k] · [k]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: av.shape().to_vec(),
            right: bv.shape().to_vec(),
        };
        if av.rank() != 2 || !(bv.rank() == 1 || bv.rank() == 2) {
            return Err(mismatch());
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        if bv.shape()[0] != k {
            return Err(mismatch());
        }
        let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let shape = if bv.rank() == 2 { vec![m, n] } else { vec![m] };
        let value = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    /// Affine map `x·Wᵀ + b` with `W: [out, in]`, applied to every row of
    /// `x` (`[in]` or `[n, in]`). For a vector this is `W·x + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.rank() == 0 || xv.rank() > 2 || xv.last_dim() != wv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [out_dim] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    left: wv.shape().to_vec(),
                    right: bv.shape().to_vec(),
                });
            }
        }
        let rows = xv.outer_rows();
        let mut out = vec![0.0; rows * out_dim];
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..rows {
            let xr = &xd[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                out[r * out_dim + o] = dot(xr, &wd[o * in_dim..(o + 1) * in_dim]);
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                for o in 0..out_dim {
                    out[r * out_dim + o] += bd[o];
                }
            }
        }
        let shape = if xv.rank() == 1 {
            vec![out_dim]
        } else {
            vec![rows, out_dim]
        };
        let value = Tensor::new(shape, out)?;
        self.push(Op::Linear { x, w, b }, value, "linear")
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v, "add")
    }

    /// Sum of several same-shaped nodes.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        assert!(!xs.is_empty(), "add_n of nothing");
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        for &x in &xs[1..] {
            self.same_shape("add_n", xs[0], x)?;
        }
        let mut acc = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            acc.add_assign(self.value(x));
        }
        self.push(Op::AddN(xs.to_vec()), acc, "add_n")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v, "scale")
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v, "add_scalar")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                message: format!("log of non-positive value {bad}"),
            });
        }
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, "log")
    }

    /// Multiplies row `r` of `x: [n, d]` by `w[r]` (`w` is `[n]` or
    /// `[n, 1]`).
    pub fn scale_rows(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        let n = xv.outer_rows();
        if xv.rank() != 2 || wv.numel() != n || wv.numel() != wv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let d = xv.last_dim();
        let wd = wv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wd[i / d])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(Op::ScaleRows { w, x }, value, "scale_rows")
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        assert!(!xs.is_empty(), "concat of nothing");
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::Domain {
                op: "concat",
                message: format!("axis {axis} out of range for {first:?}"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            value,
            "concat",
        )
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::Domain {
                op: "slice",
                message: format!("range {start}..{end} on axis {axis} of {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&xv.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor::new(out_shape, data)?;
        self.push(Op::Slice { x, axis, start }, value, "slice")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = softmax_rows(self.value(x), None)?;
        self.push(Op::Softmax(x), v, "softmax")
    }

    /// Softmax over the last axis with masked-out positions (`false`)
    /// receiving exactly zero weight; equivalent to adding `-inf` to those
    /// logits. `mask` has one flag per element of `x`.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        if mask.len() != self.value(x).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: self.value(x).shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let v = softmax_rows(self.value(x), Some(mask))?;
        self.push(Op::Softmax(x), v, "masked_softmax")
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut data = Vec::with_capacity(xv.numel());
        for r in 0..xv.outer_rows() {
            let row = xv.row(r);
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|&v| v - lse));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        debug_assert_eq!(value.last_dim(), d);
        self.push(Op::LogSoftmax(x), value, "log_softmax")
    }

    fn check_picks(&self, op: &'static str, x: NodeId, picks: &[usize]) -> Result<()> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.rank() > 2 || picks.len() != xv.outer_rows() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: xv.shape().to_vec(),
                right: vec![picks.len()],
            });
        }
        let d = xv.last_dim();
        if let Some(&p) = picks.iter().find(|&&p| p >= d) {
            return Err(TensorError::IndexOutOfRange {
                op,
                index: p,
                bound: d,
            });
        }
        Ok(())
    }

    fn picked_shape(&self, x: NodeId) -> Vec<usize> {
        let xv = self.value(x);
        if xv.rank() == 1 {
            Vec::new()
        } else {
            vec![xv.outer_rows()]
        }
    }

    /// Selects one element per row of the last axis: `[n, V] → [n]`,
    /// `[V] → []`.
    pub fn pick(&mut self, x: NodeId, picks: &[usize]) -> Result<NodeId> {
        self.check_picks("pick", x, picks)?;
        let xv = self.value(x);
        let data = picks
            .iter()
            .enumerate()
            .map(|(r, &p)| xv.row(r)[p])
            .collect();
        let value = Tensor::new(self.picked_shape(x), data)?;
        self.push(
            Op::Pick {
                x,
                picks: picks.to_vec(),
            },
            value,
            "pick",
        )
    }

    /// `-log softmax(x)[picked]` per row, stabilized by max subtraction.
    pub fn pick_neg_log_softmax(&mut self, x: NodeId, picks: &[usize]) -> Result<NodeId> {
        self.check_picks("pick_neg_log_softmax", x, picks)?;
        let xv = self.value(x);
        let data = picks
            .iter()
            .enumerate()
            .map(|(r, &p)| {
                let row = xv.row(r);
                log_sum_exp(row) - row[p]
            })
            .collect();
        let value = Tensor::new(self.picked_shape(x), data)?;
        self.push(
            Op::PickNegLogSoftmax {
                x,
                picks: picks.to_vec(),
            },
            value,
            "pick_neg_log_softmax",
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v, "sum")
    }

    /// Sum over the last axis: `[n, d] → [n]`, `[d] → []`.
    pub fn sum_last(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let data = (0..xv.outer_rows()).map(|r| xv.row(r).iter().sum()).collect();
        let shape = if xv.rank() <= 1 {
            Vec::new()
        } else {
            xv.shape()[..xv.rank() - 1].to_vec()
        };
        let value = Tensor::new(shape, data)?;
        self.push(Op::SumLast(x), value, "sum_last")
    }

    /// Dropout; the identity in inference graphs and at rate 0.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: DropoutMode<'_>) -> Result<NodeId> {
        let max_ok = matches!(mode, DropoutMode::WordZero);
        if !(0.0..=1.0).contains(&rate) || (rate == 1.0 && !max_ok) {
            return Err(TensorError::BadRate(rate));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let shape = self.value(x).shape().to_vec();
        let Some(state) = self.train.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - rate;
        let mask = match mode {
            DropoutMode::Standard => bernoulli_mask(state.rng, &shape, keep),
            DropoutMode::Variational(id) => match state.masks.get(id) {
                Some(m) if m.shape() == shape.as_slice() => m.clone(),
                Some(m) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "dropout",
                        left: m.shape().to_vec(),
                        right: shape,
                    })
                }
                None => {
                    let m = bernoulli_mask(state.rng, &shape, keep);
                    state.masks.insert(id.to_string(), m.clone());
                    m
                }
            },
            DropoutMode::WordZero => {
                let d = shape.last().copied().unwrap_or(1);
                let rows = shape.iter().product::<usize>() / d;
                let mut data = Vec::with_capacity(rows * d);
                for _ in 0..rows {
                    let v = if state.rng.random::<f64>() < keep { 1.0 } else { 0.0 };
                    data.extend(std::iter::repeat_n(v, d));
                }
                Tensor::new(shape, data)?
            }
        };
        let m = self.input(mask);
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not
    /// reach get no gradient entry.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut out = Gradients::with_capacity(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    out.accumulate(*p, &gy);
                }
                Op::Lookup { param, rows } => {
                    let shape = self.params.value(*param).shape().to_vec();
                    let d = shape[1];
                    let slot = out.slot(*param, &shape);
                    for (r, &row) in rows.iter().enumerate() {
                        let dst = &mut slot.data_mut()[row * d..(row + 1) * d];
                        for (a, b) in dst.iter_mut().zip(&gy.data()[r * d..(r + 1) * d]) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    let (ad, bd, gd) = (av.data(), bv.data(), gy.data());
                    for r in 0..m {
                        for c in 0..n {
                            let g = gd[r * n + c];
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                da[r * k + j] += g * bd[j * n + c];
                                db[j * n + c] += ad[r * k + j] * g;
                            }
                        }
                    }
                    let ga = Tensor::new(av.shape().to_vec(), da)?;
                    let gb = Tensor::new(bv.shape().to_vec(), db)?;
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.outer_rows();
                    let (xd, wd, gd) = (xv.data(), wv.data(), gy.data());
                    let mut dx = vec![0.0; rows * in_dim];
                    let mut dw = vec![0.0; out_dim * in_dim];
                    for r in 0..rows {
                        let xr = &xd[r * in_dim..(r + 1) * in_dim];
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let g = gd[r * out_dim + o];
                            if g == 0.0 {
                                continue;
                            }
                            let wo = &wd[o * in_dim..(o + 1) * in_dim];
                            let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for j in 0..in_dim {
                                dxr[j] += g * wo[j];
                                dwo[j] += g * xr[j];
                            }
                        }
                    }
                    let gx = Tensor::new(xv.shape().to_vec(), dx)?;
                    let gw = Tensor::new(wv.shape().to_vec(), dw)?;
                    if let Some(b) = b {
                        let mut db = vec![0.0; out_dim];
                        for r in 0..rows {
                            for o in 0..out_dim {
                                db[o] += gd[r * out_dim + o];
                            }
                        }
                        accumulate(&mut grads, *b, &Tensor::vector(db));
                    }
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *w, &gw);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &gy);
                    accumulate(&mut grads, *b, &gy);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        accumulate(&mut grads, *x, &gy);
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &gy);
                    accumulate(&mut grads, *b, &gy.map(|g| -g));
                }
                Op::Mul(a, b) => {
                    let ga = zip(&gy, self.value(*b), |g, y| g * y);
                    let gb = zip(&gy, self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, &gy.map(|g| g * c));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, &gy),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value");
                    accumulate(&mut grads, *a, &zip(&gy, y, |g, y| g * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value");
                    accumulate(&mut grads, *a, &zip(&gy, y, |g, y| g * y * (1.0 - y)));
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().expect("value");
                    accumulate(&mut grads, *a, &zip(&gy, y, |g, y| g * y));
                }
                Op::Log(a) => {
                    let gx = zip(&gy, self.value(*a), |g, x| g / x);
                    accumulate(&mut grads, *a, &gx);
                }
                Op::ScaleRows { w, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let d = xv.last_dim();
                    let (wd, xd, gd) = (wv.data(), xv.data(), gy.data());
                    let mut dw = vec![0.0; wv.numel()];
                    let mut dx = vec![0.0; xv.numel()];
                    for (i, (&g, &xval)) in gd.iter().zip(xd).enumerate() {
                        dw[i / d] += g * xval;
                        dx[i] = g * wd[i / d];
                    }
                    let gw = Tensor::new(wv.shape().to_vec(), dw)?;
                    let gx = Tensor::new(xv.shape().to_vec(), dx)?;
                    accumulate(&mut grads, *w, &gw);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Concat { xs, axis } => {
                    let shape = gy.shape().to_vec();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let total = shape[*axis];
                    let mut offset = 0;
                    for x in xs {
                        let xs_shape = self.value(*x).shape().to_vec();
                        let len = xs_shape[*axis];
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&gy.data()[base..base + len * inner]);
                        }
                        offset += len;
                        accumulate(&mut grads, *x, &Tensor::new(xs_shape, data)?);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs_shape = self.value(*x).shape().to_vec();
                    let outer: usize = xs_shape[..*axis].iter().product();
                    let inner: usize = xs_shape[axis + 1..].iter().product();
                    let len = gy.shape()[*axis];
                    let mut gx = Tensor::zeros(&xs_shape);
                    for o in 0..outer {
                        let dst = (o * xs_shape[*axis] + start) * inner;
                        let src = o * len * inner;
                        gx.data_mut()[dst..dst + len * inner]
                            .copy_from_slice(&gy.data()[src..src + len * inner]);
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("value");
                    let d = y.last_dim();
                    let mut gx = Vec::with_capacity(y.numel());
                    for r in 0..y.outer_rows() {
                        let (yr, gr) = (y.row(r), &gy.data()[r * d..(r + 1) * d]);
                        let s = dot(yr, gr);
                        gx.extend(yr.iter().zip(gr).map(|(&yv, &g)| yv * (g - s)));
                    }
                    accumulate(&mut grads, *x, &Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::LogSoftmax(x) => {
                    let y = node.value.as_ref().expect("value");
                    let d = y.last_dim();
                    let mut gx = Vec::with_capacity(y.numel());
                    for r in 0..y.outer_rows() {
                        let (yr, gr) = (y.row(r), &gy.data()[r * d..(r + 1) * d]);
                        let s: f64 = gr.iter().sum();
                        gx.extend(yr.iter().zip(gr).map(|(&yv, &g)| g - yv.exp() * s));
                    }
                    accumulate(&mut grads, *x, &Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::Pick { x, picks } => {
                    let xs_shape = self.value(*x).shape().to_vec();
                    let d = *xs_shape.last().expect("rank >= 1");
                    let mut gx = Tensor::zeros(&xs_shape);
                    for (r, &p) in picks.iter().enumerate() {
                        gx.data_mut()[r * d + p] += gy.data()[r];
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::PickNegLogSoftmax { x, picks } => {
                    let xv = self.value(*x);
                    let d = xv.last_dim();
                    let mut gx = Vec::with_capacity(xv.numel());
                    for (r, &p) in picks.iter().enumerate() {
                        let row = xv.row(r);
                        let lse = log_sum_exp(row);
                        let g = gy.data()[r];
                        gx.extend(row.iter().enumerate().map(|(j, &v)| {
                            let onehot = if j == p { 1.0 } else { 0.0 };
                            g * ((v - lse).exp() - onehot)
                        }));
                    }
                    debug_assert_eq!(gx.len(), picks.len() * d);
                    accumulate(&mut grads, *x, &Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::Sum(x) => {
                    let g = gy.item();
                    let gx = Tensor::filled(self.value(*x).shape(), g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::SumLast(x) => {
                    let xv = self.value(*x);
                    let d = xv.last_dim();
                    let data = (0..xv.numel()).map(|i| gy.data()[i / d]).collect();
                    accumulate(&mut grads, *x, &Tensor::new(xv.shape().to_vec(), data)?);
                }
            }
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: &Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..k {
            let av = a[i * k + j];
            if av == 0.0 {
                continue;
            }
            let brow = &b[j * n..(j + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let d = x.last_dim();
    let mut data = Vec::with_capacity(x.numel());
    for r in 0..x.outer_rows() {
        let row = x.row(r);
        let valid = |j: usize| mask.is_none_or(|m| m[r * d + j]);
        let max = (0..d)
            .filter(|&j| valid(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::Domain {
                op: "masked_softmax",
                message: format!("row {r} has no unmasked position"),
            });
        }
        let exps: Vec<f64> = (0..d)
            .map(|j| if valid(j) { (row[j] - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::new(x.shape().to_vec(), data)
}

fn bernoulli_mask(rng: &mut Rng, shape: &[usize], keep: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let scale = 1.0 / keep;
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, t)| s.add(*n, t.clone()).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn identity_matmul() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let i = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let x = g.input(Tensor::vector(vec![3.0, -2.0]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -2.0]);
    }

    #[test]
    fn hand_matmul() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.input(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &Tensor::from_rows(&[vec![3.0], vec![7.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 2]));
        assert_eq!(
            g.matmul(a, b).unwrap_err(),
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 2]
            }
        );
    }

    #[test]
    fn tanh_and_sigmoid_at_zero() {
        let (store, ids) = store_with(&[("x", Tensor::scalar(0.0))]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let t = g.tanh(x).unwrap();
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        assert_eq!(g.value(s).item(), 0.5);
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().item(), 1.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(TensorError::Domain { op: "log", .. })));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![1000.0]));
        assert_eq!(g.exp(x).unwrap_err(), TensorError::NonFinite { op: "exp" });
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(&[4]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
        let z = g.input(Tensor::from_rows(&[vec![1.0, -3.0, 700.0], vec![0.1, 0.2, 0.3]]));
        let p = g.softmax(z).unwrap();
        for r in 0..2 {
            assert!((g.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pick_neg_log_softmax_of_two_zeros() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(&[2]));
        let l = g.pick_neg_log_softmax(x, &[0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            g.pick_neg_log_softmax(x, &[2]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn neg_log_softmax_gradient_is_softmax_minus_onehot() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![0.5, -1.0, 2.0]))]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let l = g.pick_neg_log_softmax(x, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        let z: f64 = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp()).sum();
        let expected = [0.5f64.exp() / z, (-1.0f64).exp() / z - 1.0, 2.0f64.exp() / z];
        for (a, e) in grads.get(ids[0]).unwrap().data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_rows(&[vec![1.0, 5.0, 2.0]]));
        let y = g.masked_softmax(x, &[true, false, true]).unwrap();
        assert_eq!(g.value(y).data()[1], 0.0);
        assert!((g.value(y).sum() - 1.0).abs() < 1e-12);
        assert!(g.masked_softmax(x, &[false, false, false]).is_err());
    }

    #[test]
    fn lookup_gradient_is_sparse_and_accumulates() {
        let table = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]);
        let (store, ids) = store_with(&[("E", table)]);
        let mut g = Graph::new(&store);
        let r0 = g.lookup(ids[0], 0).unwrap();
        assert_eq!(g.value(r0).data(), &[1.0, 2.0]);
        let r3 = g.lookup(ids[0], 3).unwrap();
        let s = g.sum(r3).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(
            grads.get(ids[0]).unwrap().data(),
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]
        );

        let mut g = Graph::new(&store);
        let a = g.lookup(ids[0], 2).unwrap();
        let b = g.lookup(ids[0], 2).unwrap();
        let ab = g.add(a, b).unwrap();
        let s = g.sum(ab).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().row(2), &[2.0, 2.0]);
        assert!(g.lookup(ids[0], 4).is_err());
    }

    #[test]
    fn concat_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::vector(vec![1.0, 2.0]));
        let b = g.input(Tensor::vector(vec![3.0, 4.0, 5.0]));
        assert_eq!(g.concat(&[a], 0).unwrap(), a);
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[5]);
        let m = g.input(Tensor::zeros(&[2, 2]));
        assert!(g.concat(&[m, b], 0).is_err());
    }

    #[test]
    fn backward_reaches_only_used_params() {
        let (store, ids) = store_with(&[
            ("p", Tensor::vector(vec![1.0, 2.0, 3.0])),
            ("q", Tensor::vector(vec![1.0])),
        ]);
        let mut g = Graph::new(&store);
        let p = g.param(ids[0]);
        let _q = g.param(ids[1]);
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(grads.get(ids[1]).is_none());
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(1);
        let mut g = Graph::training(&store, &mut rng);
        let x = g.input(Tensor::filled(&[3, 4], 1.0));
        assert_eq!(g.dropout(x, 0.0, DropoutMode::Standard).unwrap(), x);
        assert!(g.dropout(x, 1.0, DropoutMode::Standard).is_err());
        assert!(g.dropout(x, -0.1, DropoutMode::WordZero).is_err());

        let mut g = Graph::new(&store);
        let x = g.input(Tensor::filled(&[3, 4], 1.0));
        assert_eq!(g.dropout(x, 0.5, DropoutMode::Standard).unwrap(), x);
    }

    #[test]
    fn variational_mask_is_reused() {
        let store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(9);
        let mut g = Graph::training(&store, &mut rng);
        let mut patterns = Vec::new();
        for _ in 0..10 {
            let x = g.input(Tensor::filled(&[2, 16], 1.0));
            let y = g.dropout(x, 0.5, DropoutMode::Variational("enc.l0.h")).unwrap();
            patterns.push(g.value(y).data().iter().map(|&v| v == 0.0).collect::<Vec<_>>());
        }
        assert!(patterns.windows(2).all(|w| w[0] == w[1]));
        assert!(patterns[0].iter().any(|&z| z) && patterns[0].iter().any(|&z| !z));
        // A different id draws a fresh mask.
        let x = g.input(Tensor::filled(&[2, 16], 1.0));
        let y = g.dropout(x, 0.5, DropoutMode::Variational("other")).unwrap();
        let other: Vec<bool> = g.value(y).data().iter().map(|&v| v == 0.0).collect();
        assert_ne!(other, patterns[0]);
    }

    #[test]
    fn word_dropout_zeroes_rows_without_rescaling() {
        let store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(4);
        let mut g = Graph::training(&store, &mut rng);
        let x = g.input(Tensor::filled(&[50, 3], 2.0));
        let y = g.dropout(x, 0.5, DropoutMode::WordZero).unwrap();
        let v = g.value(y);
        for r in 0..50 {
            let row = v.row(r);
            assert!(row == [0.0; 3] || row == [2.0; 3]);
        }
        let all = g.dropout(x, 1.0, DropoutMode::WordZero).unwrap();
        assert!(g.value(all).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_dropout_is_seeded() {
        let store = ParamStore::new();
        let run = || {
            let mut rng = Rng::seed_from_u64(5);
            let mut g = Graph::training(&store, &mut rng);
            let x = g.input(Tensor::filled(&[8], 1.0));
            let y = g.dropout(x, 0.3, DropoutMode::Standard).unwrap();
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
    }
}
