use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// No complete path of the requested length exists.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The numerator graph admits no alignment; callers drop the utterance.
    #[error("skip utterance: {0}")]
    SkipUtterance(String),

    #[error("graph is empty after trimming")]
    EmptyGraph,

    #[error("more than {limit} paths; shrink the test case")]
    PathLimit { limit: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown phone {0}")]
    UnknownPhone(u32),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("checkpoint config hash mismatch: expected {expected}, found {found}")]
    ConfigHash { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Infeasible(_) => "infeasible",
            Error::SkipUtterance(_) => "skip_utterance",
            Error::EmptyGraph => "empty_graph",
            Error::PathLimit { .. } => "path_limit",
            Error::NonFinite(_) => "non_finite",
            Error::UnknownPhone(_) => "unknown_phone",
            Error::Format(_) => "format",
            Error::ConfigHash { .. } => "config_hash",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
