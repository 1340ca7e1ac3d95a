use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::neuzz::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("index {index} out of range (limit {limit})")]
    Bounds { index: usize, limit: usize },

    #[error("input of {len} bytes exceeds capacity {capacity}")]
    Size { len: usize, capacity: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("cannot launch {path}: {reason}")]
    Launch { path: PathBuf, reason: String },

    #[error("resident target process is gone: {0}; re-initialize the session")]
    SessionBroken(String),

    #[error("target build failed: {0}")]
    Build(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("output layout is malformed: {0}")]
    Structure(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("training corpus rejected:\n{0}")]
    CorpusRejected(ValidationReport),

    #[error("training corpus has no edge whose label varies")]
    NoSignal,

    #[error("campaign time or execution budget exhausted")]
    Exhausted,

    #[error("campaigns ran in different execution modes: {0}")]
    ModeMismatch(String),
}

/// Non-fatal conditions surfaced to callers. Each is also logged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Warning {
    /// Persistent mode was requested but the target lacks the capability
    /// marker; the session runs in fork mode.
    ModeDowngraded { target: PathBuf },
    /// Training corpus size outside the 1k-10k guideline.
    SampleCountOutsideGuideline { count: usize },
    /// Fewer edges with varying labels than requested outputs.
    FewerVariableEdges { requested: usize, available: usize },
    /// Top-k larger than the input; clamped.
    TopKClamped { requested: usize, clamped_to: usize },
    /// Input too short for deletion; only insertions were produced.
    DeletionSkipped { len: usize },
    /// Queue-only enumeration used for evaluation, which undercounts.
    QueueOnlyEvaluation,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ModeDowngraded { target } => write!(
                f,
                "ModeDowngraded: persistent mode requested but {} has no persistent capability; running in fork mode",
                target.display()
            ),
            Warning::SampleCountOutsideGuideline { count } => {
                write!(f, "training corpus has {} samples, outside the 1,000-10,000 guideline", count)
            }
            Warning::FewerVariableEdges { requested, available } => {
                write!(f, "requested {} output edges but only {} vary across samples", requested, available)
            }
            Warning::TopKClamped { requested, clamped_to } => {
                write!(f, "top-k {} exceeds input length; clamped to {}", requested, clamped_to)
            }
            Warning::DeletionSkipped { len } => {
                write!(f, "input of {} bytes is too short for deletion; insertion only", len)
            }
            Warning::QueueOnlyEvaluation => write!(
                f,
                "DEPRECATED: queue-only replay ignores vari_seed, crash and hang testcases and undercounts coverage"
            ),
        }
    }
}

impl Warning {
    pub(crate) fn emit(self) -> Warning {
        log::warn!("{}", self);
        self
    }
}
