//! Minimal reverse-mode differentiable array core.

mod array;
mod graph;
pub mod kernels;
mod optim;
pub mod rng;

pub use array::Array;
pub use graph::{Graph, Var};
pub(crate) use graph::row_kl;

#[cfg(test)]
mod tests;
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use rng::{derive_seed, seeded_rng, Rng};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: String,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("node #{0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph cycle: node #{node} depends on #{parent}")]
    Cycle { node: usize, parent: usize },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match parameter `{0}`")]
    StateMismatch(String),
}

/// Softmax of `logits / temperature` along the last axis.
pub fn softmax(logits: &Array, temperature: f64) -> Result<Array, DiffError> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let y = g.softmax(x, temperature)?;
    Ok(g.value(y).clone())
}

/// Log-softmax of `logits / temperature` along the last axis.
pub fn log_softmax(logits: &Array, temperature: f64) -> Result<Array, DiffError> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let y = g.log_softmax(x, temperature)?;
    Ok(g.value(y).clone())
}

/// Matrix product of two 2-D arrays.
pub fn matmul(a: &Array, b: &Array) -> Result<Array, DiffError> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let y = g.matmul(a, b)?;
    Ok(g.value(y).clone())
}
