use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("infinite perplexity: token {word} in held-out document {doc} has zero probability")]
    InfinitePerplexity { doc: usize, word: u32 },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("inconsistent state: {0}")]
    Invariant(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name for the error category.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed-line",
            Error::EmptyCorpus => "empty-corpus",
            Error::EmptyVocabulary => "empty-vocabulary",
            Error::Config(_) => "config",
            Error::Stratification(_) => "stratification",
            Error::NumericOverflow(_) => "numeric-overflow",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Range(_) => "range",
            Error::InfinitePerplexity { .. } => "infinite-perplexity",
            Error::Divergence { .. } => "divergence",
            Error::Format(_) => "format",
            Error::Invariant(_) => "invariant",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by bad user input rather than a fault in
    /// the computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedLine { .. }
                | Error::EmptyCorpus
                | Error::EmptyVocabulary
                | Error::Config(_)
                | Error::Stratification(_)
                | Error::Format(_)
                | Error::Json(_)
        )
    }
}
