//! NEUZZ-style learning and mutation: single-seed corpus collection,
//! corpus validation, an explicit two-layer perceptron, byte gradients and
//! the fixed- and variant-length mutators.

pub mod collect;
pub mod model;
pub mod mutate;

pub use collect::{
    collect_training_corpus, collect_training_corpus_with, hamming, select_output_edges, validate_corpus,
    DeterministicSchedule, Sample, TrainingCorpus, ValidationReport, Violation, ViolationReason,
    DEFAULT_ALIGNMENT_THRESHOLD, DEFAULT_COLLECTION_BUDGET,
};
pub use model::{train, ByteGradient, GradVariant, Hyper, Model};
pub use mutate::{mutate_fixed_length, mutate_variant_length};

use crate::error::{Error, Result};

/// Exactly one non-empty seed. Collection takes this rather than a list, so
/// a multi-seed corpus cannot be passed in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seed(Vec<u8>);

impl Seed {
    pub fn new(bytes: Vec<u8>) -> Result<Seed> {
        if bytes.is_empty() {
            return Err(Error::Config("seed is empty".into()));
        }
        Ok(Seed(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
