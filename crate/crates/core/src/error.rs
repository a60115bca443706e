use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field `{field}` is {len} bytes, limit is 255")]
    Oversize { field: &'static str, len: usize },

    #[error("k = {0} unpredictable fields exceeds the enumeration limit of {max}", max = crate::message::MAX_K)]
    KTooLarge(u32),

    #[error("invalid message template: {0}")]
    InvalidTemplate(String),

    #[error("Merkle tree needs a power-of-two leaf count, got {0}")]
    NotPowerOfTwo(usize),

    #[error("invalid prioritized set: {0}")]
    InvalidSet(String),

    #[error("leaf index {index} out of range for a tree of {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("disclosed key index {claimed} is not newer than verified index {verified}")]
    StaleIndex { claimed: u32, verified: u32 },

    #[error("true message is not in the prioritized set")]
    CacheMiss,

    #[error("key for interval {interval} may not be disclosed before interval {earliest} (now {now})")]
    ScheduleViolation { interval: u32, earliest: u32, now: u32 },

    #[error("interval {0} is outside the key chain")]
    ChainExhausted(u32),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("malformed wire encoding: {0}")]
    Malformed(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
