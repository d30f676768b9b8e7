//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] is built fresh for every training or inference step. It
//! borrows a [`ParamStore`] for parameter values; [`Graph::backward`]
//! returns [`Gradients`] keyed by parameter, which an [`Optimizer`] then
//! consumes. Nothing in a graph outlives the step that built it.
//!
//! All randomness (initialization, dropout masks) comes from the caller's
//! [`Rng`], a ChaCha8 stream seeded with `Rng::seed_from_u64`.

mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::TensorError;
pub use graph::{DropoutMode, Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// The PRNG used throughout: ChaCha8, seeded per experiment.
pub type Rng = rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
