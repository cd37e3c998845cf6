use std::path::Path;

use thiserror::Error;

/// Errors surfaced by the CLI and the service. `Validation`, `NotFound` and
/// `OutOfOrder` are caller mistakes; `Internal` is everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{message}")]
    Validation { code: &'static str, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("out of order: {0}")]
    OutOfOrder(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(code: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation { code, .. } => code,
            Error::NotFound(_) => "not_found",
            Error::OutOfOrder(_) => "out_of_order",
            Error::Internal(_) => "internal",
        }
    }

    /// Process exit code: 1 for caller errors, 2 for internal ones.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Internal(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::validation("file_not_found", format!("{}: {e}", path.display()))
        } else {
            Error::Internal(format!("{}: {e}", path.display()))
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Internal(format!("json: {e}"))
    }
}

macro_rules! validation_from {
    ($($ty:ty => $code:literal),* $(,)?) => {
        $(impl From<$ty> for Error {
            fn from(e: $ty) -> Self {
                Error::validation($code, e.to_string())
            }
        })*
    };
}

validation_from! {
    matchaudit_core::DatasetError => "invalid_dataset",
    matchaudit_core::GroupError => "invalid_groups",
    matchaudit_core::MatcherError => "matcher_error",
    matchaudit_core::AuditError => "audit_error",
    matchaudit_core::stats::StatsError => "stats_error",
    matchaudit_core::explain::ExplainError => "explain_error",
    matchaudit_core::resolve::ResolveError => "resolve_error",
}
