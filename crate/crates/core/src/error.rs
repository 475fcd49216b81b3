use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A file could not be decoded. `record` names the offending record when
    /// the failure is local to one.
    #[error("decode error{}: {message}", fmt_record(*.record))]
    Decode { record: Option<u64>, message: String },

    #[error("integrity error in image group {image}: {message}")]
    Integrity { image: u64, message: String },

    #[error("checksum mismatch: header says {expected:#018x}, records hash to {actual:#018x}")]
    Checksum { expected: u64, actual: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mix partner {partner} referenced by image {image} could not be resolved")]
    UnresolvedPartner { image: u64, partner: i64 },

    #[error("teacher failed on image {image}: {source}")]
    Teacher {
        image: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

fn fmt_record(record: Option<u64>) -> String {
    match record {
        Some(r) => format!(" at record {r}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn decode(record: Option<u64>, message: impl Into<String>) -> Self {
        Error::Decode { record, message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
