//! Coverage-guided fuzzing with a persistent-mode executor, gradient-guided
//! mutation, complete result collection and uniform-metric replay.

pub mod campaign;
pub mod channel;
pub mod cli;
pub mod config;
pub mod corpus_store;
pub mod coverage;
pub mod error;
pub mod evaluator;
pub mod executor;
pub mod neuzz;
pub mod target_runtime;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result, Warning};
