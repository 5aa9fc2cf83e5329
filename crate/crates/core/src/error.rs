use crate::grid::VarLabel;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown variable label {0:?}")]
    UnknownLabel(VarLabel),

    #[error("incompatible composition: {0}")]
    Composition(String),

    #[error("singular marginalization: condition number {cond:.3e} exceeds {limit:.3e}")]
    SingularMarginal { cond: f64, limit: f64 },

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("readout law invalid: {0}")]
    LawValidity(String),

    #[error("boundary-value solve failed: {0}")]
    BvpSingular(String),

    #[error("sampler failure: {0}")]
    Sampling(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
