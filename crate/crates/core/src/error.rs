//! Crate-wide error type.
//!
//! Validation failures carry enough structure (sequence id, line, offending
//! value) to point at the exact input record, mirroring how the loaders are
//! expected to reject malformed streams instead of sanitizing them.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json on line {line} of {path}: {message}")]
    Json {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid sequence {seq_id}: {message}")]
    InvalidSequence { seq_id: String, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown token {token:?} (vocabulary is closed)")]
    ClosedVocab { token: String },

    #[error("unknown event type {type_text:?} (type set is closed at training time)")]
    UnknownType { type_text: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {message}")]
    Shape { op: String, message: String },

    #[error("numeric failure in {context}: {message}")]
    Numeric { context: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn shape(op: &str, msg: impl Into<String>) -> Self {
        CoreError::Shape {
            op: op.to_string(),
            message: msg.into(),
        }
    }

    pub fn numeric(context: &str, msg: impl Into<String>) -> Self {
        CoreError::Numeric {
            context: context.to_string(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
