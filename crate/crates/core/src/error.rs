use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rid {rid} at position {index} is out of range for a file of {len} records")]
    RidOutOfRange { index: usize, rid: u32, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inconsistent runs: {0}")]
    Consistency(String),

    #[error("index construction failed: {0}")]
    Construction(String),

    #[error("referential integrity violated: key of R record {rid_r} has no match in F")]
    ReferentialIntegrity { rid_r: u32 },

    #[error("sort key {key} does not fit in {key_bits} bits")]
    KeyOutOfRange { key: u64, key_bits: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
