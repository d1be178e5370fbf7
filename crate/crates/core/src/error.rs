use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular covariance (condition estimate {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("cyclic term {term} failed: {source}")]
    CyclicTerm {
        term: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("spectrum contains sigma = {0} >= 1")]
    SigmaOutOfRange(f64),

    #[error("eigendecomposition did not converge")]
    Eigen,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("linear probe needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse category used by the C bindings and by run manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::SigmaOutOfRange(_) => "domain",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::SingularCovariance { .. } => "singular-covariance",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::CyclicTerm { source, .. } => source.kind(),
            Error::Eigen => "eigen",
            Error::Config(_) | Error::SingleClass(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => "io",
        }
    }
}
