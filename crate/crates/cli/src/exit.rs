use std::fmt;

use ego_core::Error;

pub const USAGE: i32 = 1;
pub const MANIFEST: i32 = 2;
pub const BACKEND: i32 = 3;
pub const DUPLICATE: i32 = 4;
pub const ENROLLMENT: i32 = 5;
pub const CONTEXT_OVERFLOW: i32 = 6;
pub const IO: i32 = 7;

/// Bad flags or arguments detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return USAGE;
    }
    if err.downcast_ref::<BackendFailure>().is_some() {
        return BACKEND;
    }
    match err.downcast_ref::<Error>() {
        Some(e) => match e {
            Error::InvalidArgument(_) => USAGE,
            Error::Manifest(_) => MANIFEST,
            Error::DuplicateConcept(_) => DUPLICATE,
            Error::Enrollment { .. } | Error::EmptyKeywords => ENROLLMENT,
            Error::ContextLimit { .. } => CONTEXT_OVERFLOW,
            Error::Io { .. } | Error::Library(_) | Error::Format(_) => IO,
            _ => BACKEND,
        },
        None => IO,
    }
}

/// The backend could not be constructed or connected.
#[derive(Debug)]
pub struct BackendFailure(pub String);

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendFailure {}
