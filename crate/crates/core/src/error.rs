use thiserror::Error;

use crate::protocol::TrainingReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field elements belong to different moduli ({left} vs {right})")]
    ModulusMismatch { left: u128, right: u128 },

    #[error("{0} is not prime")]
    NotPrime(u128),

    #[error("modulus too small: need p > {required}, got {actual}")]
    InsufficientHeadroom { required: String, actual: u128 },

    #[error("value {value} cannot be encoded with {decimal_places} decimal places under this modulus")]
    EncodingOverflow { value: f64, decimal_places: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("share set incomplete: missing server index {missing:?}")]
    IncompleteShareSet { missing: Vec<usize> },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("protocol desync: expected round {expected}, got {got}")]
    ProtocolDesync { expected: u64, got: u64 },

    #[error("round {round} incomplete: {detail}")]
    IncompleteRound { round: u64, detail: String },

    #[error("decoded aggregate outside codec range in round {round}")]
    WraparoundFault { round: u64 },

    #[error("labels have zero variance")]
    DegenerateLabels,

    #[error("receive timed out")]
    Timeout,

    #[error("connection fault: {0}")]
    ConnectionFault(String),

    #[error("frame error: {0}")]
    Frame(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("training aborted after {} rounds: {cause}", report.rounds.len())]
    Aborted {
        report: Box<TrainingReport>,
        cause: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// The underlying cause when this is an [`Error::Aborted`] wrapper, else `self`.
    pub fn root(&self) -> &Error {
        match self {
            Error::Aborted { cause, .. } => cause.root(),
            other => other,
        }
    }
}
