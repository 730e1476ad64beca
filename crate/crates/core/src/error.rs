use std::path::PathBuf;

/// Errors produced anywhere in the decoding engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("character {ch:?} at byte {offset} has no covering token")]
    UncoverableCharacter { ch: char, offset: usize },

    #[error("token id {0} is not in the vocabulary")]
    ForeignToken(u32),

    #[error("end-of-sequence token must be the final token (found at position {0})")]
    EosNotFinal(usize),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model {identity} unavailable: {reason}")]
    ModelUnavailable { identity: String, reason: String },

    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("tokenizations disagree on surface: generator {generator:?}, ranker {ranker:?}")]
    TokenizationDisagreement { generator: String, ranker: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("search space of {size} sequences exceeds the enumeration limit {limit}")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error("handshake failed: {0}")]
    HandshakeFailure(String),

    #[error("call {method} timed out after {secs:.1}s")]
    Timeout { method: String, secs: f64 },

    #[error("malformed response ({reason}): {frame}")]
    MalformedResponse { reason: String, frame: String },

    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },

    #[error("selector unavailable: {0}")]
    SelectorUnavailable(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    pub(crate) fn unavailable(identity: &str, reason: impl std::fmt::Display) -> Self {
        Error::ModelUnavailable { identity: identity.to_string(), reason: reason.to_string() }
    }

    /// Whether the error came from a scorer or its transport rather than from bad input.
    pub fn is_scorer_failure(&self) -> bool {
        matches!(
            self,
            Error::ModelUnavailable { .. }
                | Error::HandshakeFailure(_)
                | Error::Timeout { .. }
                | Error::MalformedResponse { .. }
                | Error::Remote { .. }
                | Error::SelectorUnavailable(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
