use thiserror::Error;

/// Errors raised while building, fitting or testing models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("cannot place knots: {0}")]
    Knots(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("collinear covariates: fixed-effect design has rank {rank} < {cols}")]
    CollinearCovariates { rank: usize, cols: usize },

    #[error("insufficient subjects for unstructured covariance: N = {n} must exceed K + p + 1 = {required}")]
    InsufficientSubjects { n: usize, required: usize },

    #[error("too few distinct s values: {distinct} distinct values, need at least {required}")]
    TooFewDistinct { distinct: usize, required: usize },

    #[error("covariance not invertible")]
    SingularCovariance,

    #[error("cannot Cholesky-factor null covariance")]
    NullCovarianceNotPd,

    #[error("no random effects in null model")]
    NoRandomEffects,

    #[error("residual-vector permutation requires balanced data: a subject could receive a residual vector from a subject with a different set of observed outcomes; use the covariate or cholesky method")]
    UnbalancedResidualPermutation,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the input data rather than by estimation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_)
                | Error::Knots(_)
                | Error::Dimension(_)
                | Error::UnbalancedResidualPermutation
                | Error::Config(_)
                | Error::TooFewDistinct { .. }
                | Error::InsufficientSubjects { .. }
        )
    }
}
