use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no chapter headings matched the segmentation patterns")]
    NoChaptersFound,
    #[error("book heading at byte {offset} appears before any volume heading")]
    NonMonotoneHeading { offset: usize },
    #[error("invalid segmentation pattern `{pattern}`: {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("trim marker `{0}` not found in text")]
    MarkerNotFound(String),
    #[error("alias `{alias}` is claimed by both `{first}` and `{second}`")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
    #[error("invalid lexicon (line {line}): {reason}")]
    InvalidLexicon { line: usize, reason: String },
    #[error("network has no nodes")]
    EmptyNetwork,
    #[error("subject has no chapters")]
    EmptySubject,
    #[error("all filters removed every word from the vocabulary")]
    EmptyVocabulary,
    #[error("topic count {topics} must be in 1..min(|W|={words}, |D|={docs})")]
    DimensionError {
        topics: usize,
        words: usize,
        docs: usize,
    },
    #[error("empty chapter window")]
    EmptyWindow,
    #[error("chapter {ordinal} outside 1..={max}")]
    OrdinalOutOfRange { ordinal: usize, max: usize },
    #[error("invalid phases: {0}")]
    InvalidPhases(String),
    #[error("unknown character `{0}`")]
    UnknownCharacter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs `{missing}`; run `{producer}` first")]
    StageDependencyMissing {
        stage: &'static str,
        missing: String,
        producer: &'static str,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::BadPattern { .. }
            | Error::InvalidRoster(_)
            | Error::InvalidLexicon { .. }
            | Error::AmbiguousAlias { .. }
            | Error::InvalidPhases(_)
            | Error::UnknownCharacter(_) => 2,
            Error::StageDependencyMissing { .. } => 3,
            _ => 4,
        }
    }

    /// Stable machine-readable kind, emitted in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoChaptersFound => "NoChaptersFound",
            Error::NonMonotoneHeading { .. } => "NonMonotoneHeading",
            Error::BadPattern { .. } => "BadPattern",
            Error::MarkerNotFound(_) => "MarkerNotFound",
            Error::AmbiguousAlias { .. } => "AmbiguousAlias",
            Error::InvalidRoster(_) => "InvalidRoster",
            Error::InvalidLexicon { .. } => "InvalidLexicon",
            Error::EmptyNetwork => "EmptyNetwork",
            Error::EmptySubject => "EmptySubject",
            Error::EmptyVocabulary => "EmptyVocabulary",
            Error::DimensionError { .. } => "DimensionError",
            Error::EmptyWindow => "EmptyWindow",
            Error::OrdinalOutOfRange { .. } => "OrdinalOutOfRange",
            Error::InvalidPhases(_) => "InvalidPhases",
            Error::UnknownCharacter(_) => "UnknownCharacter",
            Error::Config(_) => "ConfigError",
            Error::StageDependencyMissing { .. } => "StageDependencyMissing",
            Error::Io { .. } => "IoError",
            Error::Artifact { .. } => "ArtifactError",
        }
    }
}
