//! Config-driven sequence-to-sequence experiments.

pub mod data;
mod error;
pub mod inference;
pub mod log;
pub mod nn;
pub mod resolver;
pub mod runner;
pub mod training;

pub use error::{Error, ResolveError, Result};
