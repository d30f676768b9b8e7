use std::collections::HashMap;

use rand::Rng as _;

use crate::error::TensorError;
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Owns every trainable tensor of an experiment, in creation order.
/// Names are dotted config paths and unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    /// Glorot-uniform matrix of shape `[fan_out, fan_in]`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_out: usize,
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<ParamId, TensorError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, &[fan_out, fan_in], limit, rng)
    }

    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        limit: f64,
        rng: &mut Rng,
    ) -> Result<ParamId, TensorError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Gradients produced by one backward pass. Parameters the loss does not
/// reach have no entry, which optimizers treat as a zero gradient.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.slot(id, g.shape()).add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// The gradient of `id`, or zeros shaped like the parameter.
    pub fn dense(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
        }
        norm
    }

    /// Adds another set of gradients into this one.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.accumulate(id, g);
        }
    }
}
