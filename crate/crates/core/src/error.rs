use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by a model backend during generation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("upstream returned HTTP status {0}")]
    HttpStatus(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted response for input {0:?}")]
    Unscripted(String),
    #[error("empty input text")]
    EmptyInput,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("query is empty")]
    EmptyQuery,
    #[error("action index {index} out of range for {actions} actions")]
    InvalidAction { index: usize, actions: usize },
    #[error("backend {model} failed: {source}")]
    BackendFailure {
        model: String,
        #[source]
        source: BackendError,
    },
    #[error("episode terminated without gold answers")]
    MissingGold,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("depth {depth} out of range for {max_hops} hops")]
    DepthOutOfRange { depth: usize, max_hops: usize },
    #[error("truth list is empty")]
    EmptyTruthList,
    #[error("episode starting at step {0} has no terminal step")]
    UnterminatedEpisode(usize),
    #[error("non-finite loss in {term} term (value {value})")]
    NonFiniteLoss { term: &'static str, value: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("unknown {kind} {name:?} (registered: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
