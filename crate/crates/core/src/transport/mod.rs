//! Topic discovery and the length-framed control channel.
//!
//! Every publisher listens on a Unix stream socket at
//! `<root>/tzc/<topic>/<uuid>.sock`. Subscribers find publishers by
//! scanning the topic directory and connect to each socket once. Frames are
//! a `u32` little-endian length followed by one encoded envelope.

mod publisher;
mod subscriber;

use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

pub use publisher::{BroadcastOutcome, ConnectionStats, PublisherEndpoint};
pub use subscriber::{Received, SubscriberLink};

pub const RUNTIME_DIR_ENV: &str = "TZC_RUNTIME_DIR";
pub const DEFAULT_RESCAN: Duration = Duration::from_secs(1);
/// Frames larger than this close the connection.
pub const DEFAULT_MAX_FRAME: usize = 256 << 20;
const SUN_PATH_MAX: usize = 107;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{op} {}: {source}", path.display())]
    Io {
        op: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("a live publisher already listens on {}", .0.display())]
    PathInUse(PathBuf),
    #[error("socket path {} is too long", .0.display())]
    PathTooLong(PathBuf),
    #[error("invalid topic name `{0}`")]
    InvalidTopic(String),
}

impl TransportError {
    pub(crate) fn io(op: &'static str, path: &Path, source: io::Error) -> Self {
        TransportError::Io { op, path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportConfig {
    /// Directory holding the `tzc/` tree.
    pub root: PathBuf,
    pub rescan_interval: Duration,
    pub max_frame: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig { root: runtime_root(), rescan_interval: DEFAULT_RESCAN, max_frame: DEFAULT_MAX_FRAME }
    }
}

impl TransportConfig {
    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        TransportConfig { root: root.into(), ..TransportConfig::default() }
    }
}

/// `$TZC_RUNTIME_DIR`, or the system temp directory.
pub fn runtime_root() -> PathBuf {
    std::env::var_os(RUNTIME_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).unwrap_or_else(std::env::temp_dir)
}

/// Percent-encodes everything outside `[A-Za-z0-9_-]` so any topic maps to
/// one path component.
pub fn encode_topic(topic: &str) -> Result<String, TransportError> {
    if topic.is_empty() {
        return Err(TransportError::InvalidTopic(topic.to_owned()));
    }
    let mut out = String::with_capacity(topic.len());
    for b in topic.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    Ok(out)
}

pub fn topic_dir(root: &Path, topic: &str) -> Result<PathBuf, TransportError> {
    Ok(root.join("tzc").join(encode_topic(topic)?))
}

pub fn socket_path(root: &Path, topic: &str, uuid: &str) -> Result<PathBuf, TransportError> {
    let path = topic_dir(root, topic)?.join(format!("{uuid}.sock"));
    if path.as_os_str().len() > SUN_PATH_MAX {
        return Err(TransportError::PathTooLong(path));
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicEndpoint {
    pub topic: String,
    pub socket_path: PathBuf,
    pub publisher_uuid: String,
}

impl TopicEndpoint {
    pub fn new(root: &Path, topic: &str, uuid: &str) -> Result<Self, TransportError> {
        Ok(TopicEndpoint {
            topic: topic.to_owned(),
            socket_path: socket_path(root, topic, uuid)?,
            publisher_uuid: uuid.to_owned(),
        })
    }
}

pub(crate) fn frame(envelope: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + envelope.len());
    out.extend_from_slice(&(envelope.len() as u32).to_le_bytes());
    out.extend_from_slice(envelope);
    out
}

pub(crate) fn duration_to_poll_ms(d: Duration) -> libc::c_int {
    let ms = d.as_micros().div_ceil(1000);
    ms.min(libc::c_int::MAX as u128) as libc::c_int
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_layout() {
        let root = Path::new("/run/x");
        assert_eq!(socket_path(root, "images", "u1").unwrap(), Path::new("/run/x/tzc/images/u1.sock"));
        assert_eq!(topic_dir(root, "/cam/left").unwrap(), Path::new("/run/x/tzc/%2Fcam%2Fleft"));
        assert_eq!(encode_topic("..").unwrap(), "%2E%2E");
        assert!(encode_topic("").is_err());
        let long = "t".repeat(120);
        assert!(matches!(socket_path(root, &long, "u"), Err(TransportError::PathTooLong(_))));
    }

    #[test]
    fn poll_timeout_rounds_up() {
        assert_eq!(duration_to_poll_ms(Duration::ZERO), 0);
        assert_eq!(duration_to_poll_ms(Duration::from_micros(1)), 1);
        assert_eq!(duration_to_poll_ms(Duration::from_millis(1500)), 1500);
    }
}
