use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical blowup on path {path} at t = {time}")]
    NumericalBlowup { path: usize, time: f64 },

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("potential construction failed at x = {x}: {message}")]
    ConstructionFailure { x: f64, message: String },

    #[error("parameter derivation failed: {0}")]
    DerivationFailure(String),

    #[error("precondition violated: {message}")]
    PreconditionViolation {
        message: String,
        /// Smallest admissible time, when the violated precondition is a time threshold.
        min_t: Option<f64>,
    },

    #[error("certificate failure at stage `{stage}`: {message}")]
    CertificateFailure { stage: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
