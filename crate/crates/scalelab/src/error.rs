//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a training run blew up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceCause {
    NaN,
    Inf,
    /// Covariance repair ran out of jitter; head outputs are pathological.
    PdFailure,
}

impl std::fmt::Display for DivergenceCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceCause::NaN => write!(f, "NaN"),
            DivergenceCause::Inf => write!(f, "Inf"),
            DivergenceCause::PdFailure => write!(f, "PDFailure"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("empty sequence")]
    EmptySequence,

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("jitter ladder exhausted at 1e-2; matrix remains indefinite")]
    JitterExhausted,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("divergence detected: {0}")]
    Divergence(DivergenceCause),

    #[error("collective timed out waiting for ranks {missing:?}")]
    CollectiveTimeout { missing: Vec<usize> },

    #[error("link broken between rank {from} and rank {to}: {detail}")]
    LinkBroken {
        from: usize,
        to: usize,
        detail: String,
    },

    #[error("wire protocol error: {0}")]
    Wire(String),

    #[error("replica coherence violated at step {step}: weight hashes differ across ranks")]
    ReplicaIncoherent { step: usize },

    #[error("file format error: {0}")]
    Format(String),

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
