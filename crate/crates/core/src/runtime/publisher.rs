use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use super::RuntimeError;
use crate::instrument;
use crate::schema::{classify, plan_layout, ClassificationPlan, DataInstance, DataLayout, MessageSchema};
use crate::shm::{region_name_for, BlockHandle, Policy, RegionOptions, RegionWriter, BLOCK_HEADER_BYTES};
use crate::transport::{ConnectionStats, PublisherEndpoint, TransportConfig};
use crate::value::Value;
use crate::wire::{data_instances, encode_control_with_lengths, encode_envelope, full_serialize, ControlEnvelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageState {
    Unallocated,
    Allocated,
    Published,
}

enum State {
    Unallocated,
    Allocated { block: BlockHandle, instances: Vec<DataInstance>, layout: DataLayout },
    Published,
}

impl State {
    fn kind(&self) -> MessageState {
        match self {
            State::Unallocated => MessageState::Unallocated,
            State::Allocated { .. } => MessageState::Allocated,
            State::Published => MessageState::Published,
        }
    }
}

/// A message being built for one publisher.
///
/// Set control fields through [`value_mut`](Self::value_mut) and DATA
/// lengths through [`resize`](Self::resize); after
/// [`Publisher::allocate`] the DATA arrays are written in place with
/// [`data_mut`](Self::data_mut).
pub struct OutboundMessage {
    plan: Arc<ClassificationPlan>,
    value: Value<'static>,
    lengths: BTreeMap<String, u64>,
    state: State,
}

impl std::fmt::Debug for OutboundMessage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OutboundMessage")
            .field("schema", &self.plan.schema().name())
            .field("state", &self.state.kind())
            .field("lengths", &self.lengths)
            .finish()
    }
}

impl OutboundMessage {
    fn new(plan: Arc<ClassificationPlan>) -> Self {
        let value = Value::default_for(plan.schema());
        OutboundMessage { plan, value, lengths: BTreeMap::new(), state: State::Unallocated }
    }

    pub fn state(&self) -> MessageState {
        self.state.kind()
    }

    pub fn schema(&self) -> &Arc<MessageSchema> {
        self.plan.schema()
    }

    pub fn value(&self) -> &Value<'static> {
        &self.value
    }

    /// Control fields. DATA arrays in the value are placeholders and are
    /// ignored; only their declared lengths matter.
    pub fn value_mut(&mut self) -> &mut Value<'static> {
        &mut self.value
    }

    pub fn set(&mut self, path: &str, v: Value<'static>) -> Result<(), RuntimeError> {
        let schema = Arc::clone(self.plan.schema());
        let slot = self.value.at_path_mut(&schema, path).ok_or_else(|| RuntimeError::UnknownDataPath(path.to_owned()))?;
        *slot = v;
        Ok(())
    }

    fn expect(&self, expected: MessageState) -> Result<(), RuntimeError> {
        let actual = self.state.kind();
        if actual != expected {
            return Err(RuntimeError::InvalidState { expected, actual });
        }
        Ok(())
    }

    /// Declares the element count of the DATA array at `path`
    /// (e.g. `channels[0].values`). Only before allocation.
    pub fn resize(&mut self, path: &str, count: u64) -> Result<(), RuntimeError> {
        self.expect(MessageState::Unallocated)?;
        match self.value.at_path(self.plan.schema(), path) {
            Some(Value::Packed(_)) => {
                self.lengths.insert(path.to_owned(), count);
                Ok(())
            }
            _ => Err(RuntimeError::UnknownDataPath(path.to_owned())),
        }
    }

    pub fn length(&self, path: &str) -> u64 {
        self.lengths.get(path).copied().unwrap_or(0)
    }

    /// DATA instances of the current skeleton with the declared counts.
    fn declared_instances(&self) -> Result<Vec<DataInstance>, RuntimeError> {
        let mut instances = data_instances(&self.value, &self.plan)?;
        for inst in &mut instances {
            inst.count = self.length(&inst.path);
        }
        if let Some(unused) = self.lengths.keys().find(|k| !instances.iter().any(|i| &i.path == *k)) {
            return Err(RuntimeError::UnknownDataPath(unused.clone()));
        }
        Ok(instances)
    }

    pub fn layout(&self) -> Option<&DataLayout> {
        match &self.state {
            State::Allocated { layout, .. } => Some(layout),
            _ => None,
        }
    }

    /// Writable view of one DATA array inside the block.
    pub fn data_mut(&mut self, path: &str) -> Result<&mut [u8], RuntimeError> {
        let actual = self.state.kind();
        let State::Allocated { block, layout, .. } = &mut self.state else {
            return Err(RuntimeError::InvalidState { expected: MessageState::Allocated, actual });
        };
        let seg = layout.segment(path).ok_or_else(|| RuntimeError::UnknownDataPath(path.to_owned()))?;
        let (start, len) = (seg.offset as usize, seg.length as usize);
        Ok(&mut block.payload_mut()[start..start + len])
    }

    /// The whole block payload.
    pub fn payload_mut(&mut self) -> Result<&mut [u8], RuntimeError> {
        match &mut self.state {
            State::Allocated { block, .. } => Ok(block.payload_mut()),
            s => Err(RuntimeError::InvalidState { expected: MessageState::Allocated, actual: s.kind() }),
        }
    }

    /// Region offset of the first byte of the DATA array at `path`.
    pub fn data_region_offset(&self, path: &str) -> Option<u64> {
        let State::Allocated { block, layout, .. } = &self.state else { return None };
        Some(block.offset() + BLOCK_HEADER_BYTES + layout.segment(path)?.offset)
    }

    pub fn block_offset(&self) -> Option<u64> {
        match &self.state {
            State::Allocated { block, .. } => Some(block.offset()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishOutcome {
    pub sequence: u64,
    pub delivered: usize,
    pub dropped: usize,
    /// Encoded envelope size, framing excluded.
    pub envelope_bytes: usize,
}

/// One topic's publishing end: a region, a listening socket and a sequence
/// counter.
pub struct Publisher {
    topic: String,
    plan: Arc<ClassificationPlan>,
    writer: RegionWriter,
    endpoint: PublisherEndpoint,
    sequence: u64,
}

impl std::fmt::Debug for Publisher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Publisher")
            .field("topic", &self.topic)
            .field("region", &self.writer.name())
            .field("sequence", &self.sequence)
            .finish()
    }
}

impl Publisher {
    pub(super) fn new(
        config: &TransportConfig,
        topic: &str,
        schema: &Arc<MessageSchema>,
        mem_size: u64,
        policy: Policy,
    ) -> Result<Self, RuntimeError> {
        let uuid = uuid::Uuid::new_v4().simple().to_string();
        let writer = RegionWriter::create(&region_name_for(topic, &uuid), RegionOptions::new(mem_size).policy(policy))?;
        let endpoint = PublisherEndpoint::listen(&config.root, topic, &uuid)?;
        Ok(Publisher { topic: topic.to_owned(), plan: Arc::new(classify(schema)), writer, endpoint, sequence: 0 })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn plan(&self) -> &ClassificationPlan {
        &self.plan
    }

    pub fn region(&self) -> &RegionWriter {
        &self.writer
    }

    pub fn region_mut(&mut self) -> &mut RegionWriter {
        &mut self.writer
    }

    /// Sequence number the next publish will carry.
    pub fn next_sequence(&self) -> u64 {
        self.sequence
    }

    pub fn new_message(&self) -> OutboundMessage {
        OutboundMessage::new(Arc::clone(&self.plan))
    }

    /// Accepts waiting subscribers and reports how many are connected.
    pub fn subscriber_count(&mut self) -> usize {
        self.endpoint.accept_pending();
        self.endpoint.connection_count()
    }

    /// Reserves a block sized for the declared DATA lengths.
    pub fn allocate(&mut self, msg: &mut OutboundMessage) -> Result<(), RuntimeError> {
        if !Arc::ptr_eq(&msg.plan, &self.plan) {
            return Err(RuntimeError::ForeignMessage);
        }
        msg.expect(MessageState::Unallocated)?;
        let instances = msg.declared_instances()?;
        let layout = plan_layout(&instances).map_err(crate::wire::WireError::from)?;
        let block = self.writer.allocate(layout.total_payload_bytes)?;
        msg.state = State::Allocated { block, instances, layout };
        Ok(())
    }

    /// Sends the control part and drops the publisher's reference to the
    /// block. DATA bytes are neither copied nor serialized.
    pub fn publish(&mut self, msg: &mut OutboundMessage) -> Result<PublishOutcome, RuntimeError> {
        if !Arc::ptr_eq(&msg.plan, &self.plan) {
            return Err(RuntimeError::ForeignMessage);
        }
        msg.expect(MessageState::Allocated)?;
        let State::Allocated { instances, .. } = &msg.state else { unreachable!() };
        let current = data_instances(&msg.value, &self.plan)?;
        if current.len() != instances.len() || current.iter().zip(instances).any(|(a, b)| a.path != b.path) {
            return Err(RuntimeError::LayoutChanged);
        }
        let counts: Vec<u64> = instances.iter().map(|i| i.count).collect();
        let image = encode_control_with_lengths(&msg.value, &self.plan, &counts)?;
        let State::Allocated { block, .. } = std::mem::replace(&mut msg.state, State::Published) else {
            unreachable!()
        };
        let envelope = ControlEnvelope {
            topic: self.topic.clone(),
            sequence: self.sequence,
            region_name: self.writer.name().to_owned(),
            block_offset: block.offset(),
            message_magic: block.magic(),
            payload_bytes: block.payload_bytes(),
            control: image.into_bytes(),
        };
        let bytes = encode_envelope(&envelope)?;
        let out = self.endpoint.broadcast(&bytes);
        drop(block);
        let sequence = self.sequence;
        self.sequence += 1;
        Ok(PublishOutcome { sequence, delivered: out.delivered, dropped: out.dropped, envelope_bytes: bytes.len() })
    }

    /// Sends `value` fully serialized inside the envelope, bypassing shared
    /// memory. Used as the copying baseline; every copy is counted.
    pub fn publish_inline(&mut self, value: &Value<'_>) -> Result<PublishOutcome, RuntimeError> {
        let control = full_serialize(value, self.plan.schema())?;
        let envelope = ControlEnvelope {
            topic: self.topic.clone(),
            sequence: self.sequence,
            message_magic: 1,
            control,
            ..ControlEnvelope::default()
        };
        let bytes = encode_envelope(&envelope)?;
        instrument::record_copy(envelope.control.len() as u64);
        let out = self.endpoint.broadcast(&bytes);
        instrument::record_copy((envelope.control.len() * out.delivered) as u64);
        let sequence = self.sequence;
        self.sequence += 1;
        Ok(PublishOutcome { sequence, delivered: out.delivered, dropped: out.dropped, envelope_bytes: bytes.len() })
    }

    /// Accepts connections and flushes queued frames for up to `timeout`.
    pub fn service(&mut self, timeout: Duration) {
        self.endpoint.service(timeout);
    }

    /// Flushes queued frames; false if `timeout` passed first.
    pub fn drain(&mut self, timeout: Duration) -> bool {
        self.endpoint.drain(timeout)
    }

    /// Stops advertising and signals end-of-stream to every subscriber.
    pub fn finish(&mut self) {
        self.endpoint.finish();
    }

    pub fn wait_closed(&mut self, timeout: Duration) -> bool {
        self.endpoint.wait_closed(timeout)
    }

    pub fn connection_stats(&self) -> Vec<ConnectionStats> {
        self.endpoint.connection_stats()
    }
}
