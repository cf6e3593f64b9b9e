use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },

    #[error("row {row} has norm {norm}, expected 1 within {tol:e}")]
    NotUnitNorm { row: usize, norm: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("retraction is degenerate: |u + step| = {norm:e}")]
    DegenerateStep { norm: f64 },

    #[error("invalid arity: {0}")]
    InvalidArity(String),

    #[error("singular kernel evaluation: {0}")]
    SingularEvaluation(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid loss specification: {0}")]
    InvalidLoss(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel condition violated: {0}")]
    ConditionViolation(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("all {restarts} restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: Box<Error> },

    #[error("batch {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
