//! File formats, on-disk sessions, the HTTP service and the command-line
//! interface around `matchaudit-core`.

pub mod cli;
pub mod csvio;
pub mod demo;
pub mod error;
pub mod ingest;
pub mod report;
pub mod service;
pub mod session;

pub use error::{Error, Result};
