use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use super::{RuntimeError, SubscriberId};
use crate::instrument;
use crate::schema::{classify, ClassificationPlan, MessageSchema};
use crate::shm::{AttachError, Region, ShmError, ValidatedView, BLOCK_HEADER_BYTES};
use crate::transport::{Received, SubscriberLink, TransportConfig};
use crate::value::Value;
use crate::wire::{decode_control, decode_envelope, full_deserialize, ControlEnvelope};

/// Per-subscription outcome counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubscriberStats {
    /// Callbacks invoked.
    pub received: u64,
    /// Envelopes whose block was reclaimed before it could be attached.
    pub stale: u64,
    /// Sequence gaps: envelopes the publisher skipped for this connection.
    pub dropped: u64,
    pub decode_errors: u64,
    /// Sequence of the first envelope seen, whatever its outcome.
    pub first_sequence: Option<u64>,
    /// Sequence of the most recent envelope, whatever its outcome.
    pub last_sequence: Option<u64>,
}

impl SubscriberStats {
    pub fn accounted(&self) -> u64 {
        self.received + self.stale + self.dropped + self.decode_errors
    }
}

/// An immutable received message. DATA arrays borrow the shared block,
/// which stays referenced until the callback returns.
pub struct MessageView<'a> {
    value: Value<'a>,
    schema: &'a MessageSchema,
    envelope: &'a ControlEnvelope,
    source: &'a str,
    block: Option<&'a ValidatedView>,
}

impl<'a> MessageView<'a> {
    pub fn value(&self) -> &Value<'a> {
        &self.value
    }

    pub fn field(&self, path: &str) -> Option<&Value<'a>> {
        self.value.at_path(self.schema, path)
    }

    /// Raw bytes of the DATA array at `path`.
    pub fn data(&self, path: &str) -> Option<&[u8]> {
        self.field(path)?.as_bytes()
    }

    pub fn topic(&self) -> &str {
        &self.envelope.topic
    }

    pub fn sequence(&self) -> u64 {
        self.envelope.sequence
    }

    /// Uuid of the sending publisher.
    pub fn source(&self) -> &str {
        self.source
    }

    /// False for messages that arrived fully serialized in the envelope.
    pub fn is_zero_copy(&self) -> bool {
        self.block.is_some()
    }

    pub fn block_offset(&self) -> Option<u64> {
        self.block.map(ValidatedView::offset)
    }

    /// Region offset of the DATA array at `path`, derived from where the
    /// view actually points.
    pub fn data_region_offset(&self, path: &str) -> Option<u64> {
        let block = self.block?;
        let base = block.payload().as_ptr() as usize;
        let at = self.data(path)?.as_ptr() as usize;
        Some(block.offset() + BLOCK_HEADER_BYTES + (at - base) as u64)
    }

    /// An owned deep copy, for callers that need to keep or modify the
    /// message. The copied DATA bytes are counted.
    pub fn to_owned(&self) -> Value<'static> {
        fn packed_len(v: &Value<'_>) -> u64 {
            match v {
                Value::Packed(b) => b.len() as u64,
                Value::Array(items) | Value::Message(items) => items.iter().map(packed_len).sum(),
                _ => 0,
            }
        }
        if self.block.is_some() {
            instrument::record_copy(packed_len(&self.value));
        }
        self.value.clone().into_owned()
    }
}

type Callback = Box<dyn FnMut(&MessageView<'_>) + Send>;

pub(super) struct Subscriber {
    pub(super) id: SubscriberId,
    topic: String,
    plan: ClassificationPlan,
    pub(super) link: SubscriberLink,
    callback: Callback,
    regions: HashMap<String, Arc<Region>>,
    last_sequence: HashMap<String, u64>,
    pub(super) stats: SubscriberStats,
}

const REGION_CACHE_MAX: usize = 32;

impl Subscriber {
    pub(super) fn new(
        id: SubscriberId,
        topic: &str,
        schema: &Arc<MessageSchema>,
        config: TransportConfig,
        callback: Callback,
    ) -> Result<Self, RuntimeError> {
        Ok(Subscriber {
            id,
            topic: topic.to_owned(),
            plan: classify(schema),
            link: SubscriberLink::new(topic, config)?,
            callback,
            regions: HashMap::new(),
            last_sequence: HashMap::new(),
            stats: SubscriberStats::default(),
        })
    }

    pub(super) fn process(&mut self, timeout: Duration) -> usize {
        let frames = self.link.poll_wait(timeout);
        let n = frames.len();
        for frame in frames {
            self.handle(frame);
        }
        n
    }

    fn handle(&mut self, frame: Received) {
        let env = match decode_envelope(&frame.bytes) {
            Ok(env) if env.topic == self.topic => env,
            Ok(_) | Err(_) => {
                self.stats.decode_errors += 1;
                self.link.reject_source(&frame.source);
                return;
            }
        };
        if let Some(&last) = self.last_sequence.get(&frame.source) {
            if env.sequence > last + 1 {
                self.stats.dropped += env.sequence - last - 1;
            }
        }
        self.last_sequence.insert(frame.source.clone(), env.sequence);
        self.stats.first_sequence.get_or_insert(env.sequence);
        self.stats.last_sequence = Some(env.sequence);
        if env.region_name.is_empty() {
            self.deliver_inline(&env, &frame);
        } else {
            self.deliver_shared(&env, &frame.source);
        }
    }

    fn deliver_inline(&mut self, env: &ControlEnvelope, frame: &Received) {
        // The frame already sits in this process: one receive copy.
        instrument::record_copy(env.control.len() as u64);
        match full_deserialize(&env.control, self.plan.schema()) {
            Ok(value) => {
                let view = MessageView { value, schema: self.plan.schema(), envelope: env, source: &frame.source, block: None };
                (self.callback)(&view);
                self.stats.received += 1;
            }
            Err(_) => self.stats.decode_errors += 1,
        }
    }

    fn region(&mut self, name: &str) -> Result<Arc<Region>, ShmError> {
        if let Some(r) = self.regions.get(name) {
            return Ok(Arc::clone(r));
        }
        let r = Region::open(name)?;
        if self.regions.len() >= REGION_CACHE_MAX {
            self.regions.clear();
        }
        self.regions.insert(name.to_owned(), Arc::clone(&r));
        Ok(r)
    }

    fn deliver_shared(&mut self, env: &ControlEnvelope, source: &str) {
        let region = match self.region(&env.region_name) {
            Ok(r) => r,
            // The publisher is gone and took its region with it.
            Err(ShmError::NotFound(_)) => {
                self.stats.stale += 1;
                return;
            }
            Err(e) => {
                log::warn!("{}: cannot open region {}: {e}", self.topic, env.region_name);
                self.stats.decode_errors += 1;
                return;
            }
        };
        let block = match region.attach(env.block_offset, env.message_magic) {
            Ok(v) => v,
            Err(AttachError::Stale) => {
                self.stats.stale += 1;
                return;
            }
            Err(e) => {
                log::warn!("{}: bad block reference: {e}", self.topic);
                self.stats.decode_errors += 1;
                return;
            }
        };
        if block.payload().len() as u64 != env.payload_bytes {
            self.stats.decode_errors += 1;
            return;
        }
        match decode_control(&env.control, &self.plan, block.payload()) {
            Ok(value) => {
                let view = MessageView { value, schema: self.plan.schema(), envelope: env, source, block: Some(&block) };
                (self.callback)(&view);
                self.stats.received += 1;
            }
            Err(_) => self.stats.decode_errors += 1,
        }
    }
}
