//! Error types shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NsrError>;

#[derive(Error, Debug)]
pub enum NsrError {
    /// Shape or extent mismatch between tensors/layers.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid argument value (out-of-range label, bad distribution parameter, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite or otherwise invalid numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// Objects used together that were not produced together (masks vs model).
    #[error("state error: {0}")]
    State(String),

    /// A contract between modules was violated (unsupported loss primitive, missing w_y).
    #[error("contract error: {0}")]
    Contract(String),

    /// Model file has a newer format version than this build understands.
    #[error("version error: file format version {found} but this build reads up to {supported}")]
    Version { found: u32, supported: u32 },

    /// Model file payload does not match its recorded checksum.
    #[error("checksum error: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    /// Model file cannot be parsed at all.
    #[error("malformed model file: {0}")]
    Malformed(String),

    /// CSV ingestion rejected rows.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Training aborted (divergence).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NsrError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        NsrError::Io { path: path.into(), source }
    }
}
