//! Publisher-owned shared-memory regions.
//!
//! A region is a named POSIX shared-memory object holding a 64-byte header
//! followed by an arena of blocks. Each block starts with a 40-byte header
//! (magic, tagged refcount word, list links, payload length) and is linked
//! into a doubly-linked list in allocation order. Only the owning
//! [`RegionWriter`] allocates, links and reclaims; other processes only
//! touch refcount words through [`Region::attach`] and [`ValidatedView`].

mod mapping;
mod region;

use std::io;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use region::{
    BlockHandle, BlockInfo, Region, RegionOptions, RegionSnapshot, RegionWriter, ValidatedView, ARENA_OFFSET,
    BLOCK_HEADER_BYTES, REGION_HEADER_BYTES,
};

/// Byte written over a reclaimed payload when poisoning is enabled.
pub const POISON_BYTE: u8 = 0xDB;

/// What `allocate` does when no gap is large enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Reclaim unreferenced blocks until the allocation fits or nothing more
    /// can be freed.
    BestEffort,
    /// Give up as soon as the oldest block is still referenced.
    WorstEffort,
    /// Up to `max_attempts` oldest-first reclamation passes.
    Medium { max_attempts: u32 },
    /// Wait for the oldest block. Never accepted; see [`Policy::validate`].
    Blocking,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Medium { max_attempts: 5 }
    }
}

impl Policy {
    pub fn validate(self) -> Result<Self, ShmError> {
        match self {
            Policy::Blocking => Err(ShmError::InvalidPolicy("blocking allocation is not supported".into())),
            Policy::Medium { max_attempts: 0 } => Err(ShmError::InvalidPolicy("medium effort needs max_attempts >= 1".into())),
            p => Ok(p),
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = ShmError;

    /// Accepts `best`, `worst`, `medium` and `medium:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ShmError::InvalidPolicy(format!("unknown policy `{s}`"));
        let p = match s.trim().to_ascii_lowercase().as_str() {
            "best" | "best_effort" => Policy::BestEffort,
            "worst" | "worst_effort" => Policy::WorstEffort,
            "medium" | "medium_effort" => Policy::default(),
            "blocking" => Policy::Blocking,
            other => {
                let n = other
                    .strip_prefix("medium:")
                    .or_else(|| other.strip_prefix("medium_effort:"))
                    .ok_or_else(bad)?;
                Policy::Medium { max_attempts: n.parse().map_err(|_| bad())? }
            }
        };
        p.validate()
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::BestEffort => f.write_str("best"),
            Policy::WorstEffort => f.write_str("worst"),
            Policy::Medium { max_attempts } => write!(f, "medium:{max_attempts}"),
            Policy::Blocking => f.write_str("blocking"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ShmError {
    #[error("{op} `{name}`: {source}")]
    Os {
        op: &'static str,
        name: String,
        #[source]
        source: io::Error,
    },
    #[error("shared-memory region `{0}` already exists")]
    NameCollision(String),
    #[error("shared-memory region `{0}` not found")]
    NotFound(String),
    #[error("region `{name}` is corrupt: {reason}")]
    Corrupt { name: String, reason: String },
    #[error("invalid region size {0}")]
    InvalidSize(u64),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocError {
    #[error("block of {requested} bytes can never fit a {capacity}-byte region")]
    TooLarge { requested: u64, capacity: u64 },
    #[error("region exhausted: no room for {requested} bytes")]
    Exhausted { requested: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttachError {
    #[error("block offset {offset} is outside the region")]
    OutOfBounds { offset: u64 },
    #[error("block was reclaimed or reused")]
    Stale,
    #[error("refcount saturated")]
    RefcountOverflow,
}

/// `tzc.<first 16 hex digits of sha256(topic)>.<random uuid>`.
pub fn region_name(topic: &str) -> String {
    region_name_for(topic, &uuid::Uuid::new_v4().simple().to_string())
}

/// The region name of the publisher `uuid` on `topic`.
pub fn region_name_for(topic: &str, uuid: &str) -> String {
    format!("tzc.{}.{uuid}", topic_hash(topic))
}

pub(crate) fn topic_hash(topic: &str) -> String {
    Sha256::digest(topic.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}
