use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("n-gram order {0} out of range [1, 5]")]
    OrderOutOfRange(usize),

    #[error("vocabulary mismatch: expected {expected} entries, got {actual}")]
    VocabularyMismatch { expected: usize, actual: usize },

    #[error("vocabulary hash mismatch: expected {expected}, got {actual}")]
    VocabHashMismatch { expected: String, actual: String },

    #[error("degenerate marginal: entry {index} is {value}")]
    DegenerateMarginal { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no client mass")]
    NoClientMass,

    #[error("DP aggregation degenerate after {0} attempts")]
    DpDegenerate(usize),

    #[error("empty client list")]
    NoClients,

    #[error("empty reference")]
    EmptyReference,

    #[error("client {client} has {available} utterances, needs at least {required}")]
    TooFewUtterances {
        client: String,
        available: usize,
        required: usize,
    },

    #[error("invalid n-best list {utterance}: {reason}")]
    InvalidNBest { utterance: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }
}
