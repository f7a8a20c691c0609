use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("missing {artifact}: run `{stage}` first")]
    MissingDependency { artifact: PathBuf, stage: &'static str },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::MissingDependency { .. } => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Internal(_) => "internal",
            CliError::Input(_) => "input",
            CliError::MissingDependency { .. } => "missing-dependency",
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<textrep::Error> for CliError {
    fn from(e: textrep::Error) -> Self {
        use textrep::Error as E;
        match e {
            E::Io { .. }
            | E::MalformedLine { .. }
            | E::EmptyCorpus
            | E::EmptyVocabulary
            | E::Config(_)
            | E::Stratification(_)
            | E::Shape(_)
            | E::Range(_)
            | E::Format(_)
            | E::Json(_) => CliError::Input(e.to_string()),
            E::NumericOverflow(_)
            | E::Domain(_)
            | E::InfinitePerplexity { .. }
            | E::Divergence { .. }
            | E::Invariant(_) => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
