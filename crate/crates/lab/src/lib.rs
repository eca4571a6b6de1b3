//! File formats, configuration, the assist service and the command-line
//! front end built on `navlab-core`.

pub mod commands;
pub mod config;
pub mod formats;
pub mod protocol;
pub mod service;

/// Errors of the std layer.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Malformed input file.
    #[error("format error: {0}")]
    Format(String),
    /// Invalid or missing configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Core computation failed.
    #[error(transparent)]
    Core(#[from] navlab_core::Error),
    /// Service failure.
    #[error("service error: {0}")]
    Service(String),
    /// File or socket failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
