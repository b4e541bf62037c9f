use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A structural constraint of a model (skew-symmetry, PSD block, ...) is violated.
    #[error("structure error: {constraint} violated (magnitude {magnitude:.3e})")]
    Structure { constraint: String, magnitude: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, threshold {tau:.3e})")]
    NotPsd { min_eig: f64, tau: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("callback error: {0}")]
    Callback(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("singular coupling: condition number {condition:.3e} exceeds {limit:.3e}")]
    SingularCoupling { condition: f64, limit: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn structure(constraint: impl Into<String>, magnitude: f64) -> Self {
        Error::Structure {
            constraint: constraint.into(),
            magnitude,
        }
    }
}
