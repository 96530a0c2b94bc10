use std::path::PathBuf;

use ehrtext_core::counts::CountError;
use ehrtext_core::embed::ProviderError;
use ehrtext_core::heads::HeadError;
use ehrtext_core::instructions::InstructionError;
use ehrtext_core::model::LabelConflict;
use ehrtext_core::ontology::OntologyError;
use ehrtext_core::serialize::{ConfigError, SerializeError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingInputs(Vec<PathBuf>),
    #[error("{path}: {rejected} of {read} rows rejected, above the {limit:.2}% limit; first error at line {first_line}: {first_reason}")]
    TooManyRejects { path: PathBuf, read: usize, rejected: usize, limit: f64, first_line: usize, first_reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Serialization(#[from] ConfigError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Labels(#[from] LabelConflict),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Counts(#[from] CountError),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
