//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension {0} outside supported range 1..={max}", max = crate::matrix::MAX_DIM)]
    BadDim(usize),

    #[error("non-finite entry at ({0}, {1})")]
    NotFinite(usize, usize),

    #[error("matrix not symmetric at ({i}, {j}): |a_ij - a_ji| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("matrix not positive definite")]
    NotPd,

    #[error("{what}: iteration budget exhausted")]
    NonConvergence { what: &'static str },

    #[error("companion matrix is unstable: spectral radius {rho}")]
    Unstable { rho: f64 },

    #[error("simulation overflow at step {k}: |Y_k| exceeds 1e300")]
    Overflow { k: usize },

    #[error("Gram matrix is singular")]
    GramSingular,

    #[error("invalid parameter: {0}")]
    BadParam(String),

    #[error("inequality audit failed check {check} at k = {k}: {detail}")]
    AuditFailure {
        check: &'static str,
        k: usize,
        detail: String,
    },

    #[error("sample too small for a Kolmogorov-Smirnov test: {0} < 8")]
    TooFewSamples(usize),

    #[error("conditioning bucket {bucket} has {size} samples, needs at least {min}")]
    BucketTooSmall {
        bucket: String,
        size: usize,
        min: usize,
    },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("replication {r}: {source}")]
    Replication {
        r: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn bad_param(msg: impl Into<String>) -> Self {
        Error::BadParam(msg.into())
    }

    pub fn bad_config(msg: impl Into<String>) -> Self {
        Error::BadConfig(msg.into())
    }
}
