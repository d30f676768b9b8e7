use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or bias-corrected Adam. Moment estimates are kept per parameter
/// inside the optimizer, so two optimizers updating a shared parameter
/// keep separate statistics.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. The gradients are consumed; parameters without
    /// a gradient entry are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: Gradients) {
        self.step += 1;
        let t = self.step as i32;
        for (id, g) in grads.iter() {
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = self.lr;
                    for (w, &gv) in store.value_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m, v) = self.moments_for(id, g.shape());
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let mut update = Vec::with_capacity(g.numel());
                    for ((mi, vi), &gv) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gv;
                        *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        update.push(m_hat / (v_hat.sqrt() + eps));
                    }
                    let lr = self.lr;
                    for (w, u) in store.value_mut(id).data_mut().iter_mut().zip(update) {
                        *w -= lr * u;
                    }
                }
            }
        }
    }

    fn moments_for(&mut self, id: ParamId, shape: &[usize]) -> (&mut Tensor, &mut Tensor) {
        let i = id.index();
        if i >= self.moments.len() {
            self.moments.resize(i + 1, None);
        }
        let (m, v) =
            self.moments[i].get_or_insert_with(|| (Tensor::zeros(shape), Tensor::zeros(shape)));
        (m, v)
    }
}
