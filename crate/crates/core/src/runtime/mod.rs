//! The node-level API.
//!
//! ```no_run
//! use std::sync::Arc;
//! use std::time::Duration;
//! use tzc_core::{Node, Policy, SchemaRegistry};
//!
//! let mut registry = SchemaRegistry::new();
//! let schema = registry.add_source("demo/Blob", "uint32 id\nuint8[] data").unwrap();
//!
//! let mut node = Node::new("demo");
//! let mut publisher = node.advertise("/blobs", &schema, 64 << 20, Policy::default()).unwrap();
//! node.subscribe("/blobs", &schema, |msg| println!("{} bytes", msg.data("data").unwrap().len())).unwrap();
//!
//! let mut msg = publisher.new_message();
//! msg.resize("data", 4096).unwrap();
//! if publisher.allocate(&mut msg).is_ok() {
//!     msg.data_mut("data").unwrap().fill(1);
//!     publisher.publish(&mut msg).unwrap();
//! }
//! node.spin_once(Duration::from_millis(100));
//! ```

mod publisher;
mod subscriber;

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::schema::MessageSchema;
use crate::shm::{AllocError, Policy, ShmError, BLOCK_HEADER_BYTES};
use crate::transport::{TransportConfig, TransportError};
use crate::wire::WireError;

pub use publisher::{MessageState, OutboundMessage, PublishOutcome, Publisher};
pub use subscriber::{MessageView, SubscriberStats};

use subscriber::Subscriber;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("message is {actual:?}, operation needs {expected:?}")]
    InvalidState { expected: MessageState, actual: MessageState },
    #[error("`{0}` is not a data array of this message")]
    UnknownDataPath(String),
    #[error("control arrays changed after allocation; data layout no longer matches")]
    LayoutChanged,
    #[error("message was created by a different publisher")]
    ForeignMessage,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl RuntimeError {
    /// True for the recoverable "region full" outcome of `allocate`.
    pub fn is_exhausted(&self) -> bool {
        matches!(self, RuntimeError::Alloc(AllocError::Exhausted { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriberId(u64);

/// Owns subscriptions and drives their callbacks. Confined to one thread
/// at a time.
pub struct Node {
    name: String,
    config: TransportConfig,
    subscribers: Vec<Subscriber>,
    next_id: u64,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("name", &self.name).field("subscribers", &self.subscribers.len()).finish()
    }
}

impl Node {
    /// A node using `$TZC_RUNTIME_DIR` (or the temp dir) for discovery.
    pub fn new(name: &str) -> Self {
        Node::with_config(name, TransportConfig::default())
    }

    pub fn with_config(name: &str, config: TransportConfig) -> Self {
        Node { name: name.to_owned(), config, subscribers: Vec::new(), next_id: 0 }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    /// Creates a publisher with its own `mem_size`-byte region.
    pub fn advertise(
        &self,
        topic: &str,
        schema: &Arc<MessageSchema>,
        mem_size: u64,
        policy: Policy,
    ) -> Result<Publisher, RuntimeError> {
        let policy = policy.validate()?;
        if mem_size < BLOCK_HEADER_BYTES {
            return Err(RuntimeError::InvalidConfig(format!(
                "mem_size {mem_size} is smaller than one block header ({BLOCK_HEADER_BYTES} B)"
            )));
        }
        Publisher::new(&self.config, topic, schema, mem_size, policy)
    }

    /// Registers `callback` for `topic`. Publishers that appear later are
    /// picked up by the periodic directory rescan.
    pub fn subscribe<F>(&mut self, topic: &str, schema: &Arc<MessageSchema>, callback: F) -> Result<SubscriberId, RuntimeError>
    where
        F: FnMut(&MessageView<'_>) + Send + 'static,
    {
        let id = SubscriberId(self.next_id);
        self.next_id += 1;
        self.subscribers.push(Subscriber::new(id, topic, schema, self.config.clone(), Box::new(callback))?);
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriberId) -> Option<SubscriberStats> {
        let i = self.subscribers.iter().position(|s| s.id == id)?;
        Some(self.subscribers.remove(i).stats)
    }

    pub fn stats(&self, id: SubscriberId) -> Option<SubscriberStats> {
        self.subscribers.iter().find(|s| s.id == id).map(|s| s.stats)
    }

    /// Live publisher connections of one subscription.
    pub fn connection_count(&self, id: SubscriberId) -> usize {
        self.subscribers.iter().find(|s| s.id == id).map_or(0, |s| s.link.connection_count())
    }

    /// Waits up to `timeout` for messages and handles everything that has
    /// arrived. Returns the number of envelopes processed; per-message
    /// failures only update the stats.
    pub fn spin_once(&mut self, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        loop {
            let mut handled = 0;
            for s in &mut self.subscribers {
                handled += s.process(Duration::ZERO);
            }
            let now = Instant::now();
            if handled > 0 || now >= deadline {
                return handled;
            }
            if let [only] = self.subscribers.as_mut_slice() {
                return only.process(deadline - now);
            }
            let mut fds: Vec<_> = self
                .subscribers
                .iter()
                .flat_map(|s| s.link.raw_fds())
                .map(|fd| libc::pollfd { fd, events: libc::POLLIN, revents: 0 })
                .collect();
            let wait = (deadline - now).min(Duration::from_millis(50));
            unsafe {
                libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, crate::transport::duration_to_poll_ms(wait));
            }
        }
    }

    pub fn spin(&mut self) -> ! {
        loop {
            self.spin_once(Duration::from_secs(1));
        }
    }
}
