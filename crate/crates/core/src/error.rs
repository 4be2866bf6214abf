use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing attention capture: {0}")]
    MissingCapture(String),

    #[error("no keyword tokens left after punctuation filtering")]
    EmptyKeywords,

    #[error("context limit exceeded by {overflow} tokens ({used} used, limit {limit})")]
    ContextLimit {
        used: usize,
        limit: usize,
        overflow: usize,
    },

    #[error("no script entry matches instruction {0:?}")]
    NoScript(String),

    #[error("ambiguous script: instruction matches patterns {0:?}")]
    AmbiguousScript(Vec<String>),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("enrollment failed for view `{view}`: {reason}")]
    Enrollment { view: String, reason: String },

    #[error("concept `{0}` already exists in the library")]
    DuplicateConcept(String),

    #[error("backend fingerprint mismatch: library has {expected}, backend is {found}")]
    BackendMismatch { expected: String, found: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("judge error: {0}")]
    Judge(String),

    #[error("adapter error: {0}")]
    Adapter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Library(#[from] LibraryError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading a concept library file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LibraryError {
    #[error("not a concept library (bad magic)")]
    BadMagic,
    #[error("unsupported library format version {major}.{minor}")]
    UnsupportedVersion { major: u16, minor: u16 },
    #[error("library file is truncated")]
    Truncated,
    #[error("library checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed library: {0}")]
    Malformed(String),
}
