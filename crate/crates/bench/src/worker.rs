//! The processes of a benchmark case.

use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tzc_core::{instrument, Node, Publisher, Value};

use crate::case::{CaseConfig, Transport};
use crate::report::SubscriberReport;
use crate::{bench_registry, monotonic_ns, BENCH_SCHEMA, BENCH_TOPIC};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PublisherResult {
    pub published: u64,
    pub alloc_failures: u64,
    pub copied_bytes: u64,
    pub max_envelope_bytes: u64,
    pub connected: usize,
    pub connections: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SubscriberResult {
    pub index: u32,
    pub received: u64,
    pub stale: u64,
    pub gaps: u64,
    pub decode_errors: u64,
    pub first_sequence: Option<u64>,
    pub last_sequence: Option<u64>,
    pub corrupt: u64,
    pub latencies_us: Vec<f64>,
    pub copied_bytes: u64,
}

impl SubscriberResult {
    /// Folds envelopes never seen at the start or end of the stream into
    /// `dropped`.
    pub fn into_report(self, published: u64) -> SubscriberReport {
        let dropped = match (self.first_sequence, self.last_sequence) {
            (Some(first), Some(last)) => self.gaps + first + published.saturating_sub(last + 1),
            _ => published,
        };
        SubscriberReport {
            index: self.index,
            received: self.received,
            stale: self.stale,
            dropped,
            decode_errors: self.decode_errors,
            corrupt: self.corrupt,
            latencies_us: self.latencies_us,
            copied_bytes: self.copied_bytes,
        }
    }
}

fn load_case(path: &Path) -> anyhow::Result<CaseConfig> {
    let config: CaseConfig = serde_json::from_slice(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
    config.validate()?;
    Ok(config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn wait_until(publisher: &mut Publisher, due_ns: u64) {
    loop {
        let now = monotonic_ns();
        if now >= due_ns {
            return;
        }
        publisher.service(Duration::from_nanos(due_ns - now).min(Duration::from_millis(5)));
    }
}

pub fn run_publisher(case: &Path, out: &Path) -> anyhow::Result<()> {
    let config = load_case(case)?;
    let registry = bench_registry()?;
    let schema = registry.get(BENCH_SCHEMA).context("benchmark schema missing")?;
    let node = Node::new("bench-pub");
    let mut publisher = node.advertise(BENCH_TOPIC, schema, config.effective_region_size(), config.policy()?)?;

    let start = Instant::now();
    while publisher.subscriber_count() < config.subscribers as usize && start.elapsed() < CONNECT_TIMEOUT {
        publisher.service(Duration::from_millis(10));
    }
    let mut result = PublisherResult { connected: publisher.subscriber_count(), ..Default::default() };

    instrument::reset();
    let size = config.payload_size;
    let period_ns = 1e9 / config.publish_rate_hz;
    let t0 = monotonic_ns() + 50_000_000;
    for i in 0..config.message_count {
        let due = t0 + (i as f64 * period_ns) as u64;
        let outcome = match config.transport {
            Transport::Tzc => {
                let mut msg = publisher.new_message();
                msg.set("seq", Value::UInt64(i))?;
                msg.resize("payload", size)?;
                match publisher.allocate(&mut msg) {
                    Ok(()) => {}
                    Err(e) if e.is_exhausted() => {
                        result.alloc_failures += 1;
                        wait_until(&mut publisher, due);
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
                msg.data_mut("payload")?.fill(i as u8);
                wait_until(&mut publisher, due);
                msg.set("stamp_ns", Value::UInt64(monotonic_ns()))?;
                publisher.publish(&mut msg)?
            }
            Transport::CopyBaseline => {
                let mut value = Value::Message(vec![
                    Value::UInt64(0),
                    Value::UInt64(i),
                    Value::Packed(vec![i as u8; size as usize].into()),
                ]);
                wait_until(&mut publisher, due);
                *value.at_path_mut(schema, "stamp_ns").context("stamp field")? = Value::UInt64(monotonic_ns());
                publisher.publish_inline(&value)?
            }
        };
        result.max_envelope_bytes = result.max_envelope_bytes.max(outcome.envelope_bytes as u64);
    }
    result.published = publisher.next_sequence();

    let slow = Duration::from_millis(config.slow_subscriber_ms.saturating_mul(config.message_count));
    if !publisher.drain(Duration::from_secs(30) + slow) {
        eprintln!("publisher: frames still queued at shutdown");
    }
    publisher.finish();
    publisher.wait_closed(Duration::from_secs(30) + slow);
    result.copied_bytes = instrument::copied_bytes();
    result.connections = publisher.connection_stats().iter().map(|c| (c.delivered, c.dropped)).collect();
    write_json(out, &result)
}

#[derive(Default)]
struct Samples {
    latencies_us: Vec<f64>,
    corrupt: u64,
}

pub fn run_subscriber(case: &Path, index: u32, out: &Path) -> anyhow::Result<()> {
    let config = load_case(case)?;
    let registry = bench_registry()?;
    let schema = registry.get(BENCH_SCHEMA).context("benchmark schema missing")?;
    let mut node = Node::new(&format!("bench-sub-{index}"));
    let samples = Arc::new(Mutex::new(Samples::default()));
    let sink = Arc::clone(&samples);
    let size = config.payload_size as usize;
    let slow = if index == 0 { Duration::from_millis(config.slow_subscriber_ms) } else { Duration::ZERO };
    let id = node.subscribe(BENCH_TOPIC, schema, move |m| {
        let now = monotonic_ns();
        let stamp = m.field("stamp_ns").and_then(Value::as_u64).unwrap_or(now);
        let seq = m.field("seq").and_then(Value::as_u64).unwrap_or(u64::MAX) as u8;
        let data = m.data("payload").unwrap_or_default();
        let intact = data.len() == size && data.first().is_none_or(|&b| b == seq) && data.last().is_none_or(|&b| b == seq);
        let mut s = sink.lock().unwrap();
        s.latencies_us.push(now.saturating_sub(stamp) as f64 / 1e3);
        s.corrupt += u64::from(!intact);
        drop(s);
        if !slow.is_zero() {
            std::thread::sleep(slow);
        }
    })?;

    instrument::reset();
    let start = Instant::now();
    let deadline = config.duration() + Duration::from_secs(45) + slow * config.message_count as u32;
    let mut connected = false;
    loop {
        node.spin_once(Duration::from_millis(100));
        let live = node.connection_count(id) > 0;
        connected |= live;
        if connected && !live {
            break;
        }
        if !connected && start.elapsed() > CONNECT_TIMEOUT {
            bail!("subscriber {index}: no publisher within {CONNECT_TIMEOUT:?}");
        }
        if start.elapsed() > deadline {
            bail!("subscriber {index}: stream did not end within {deadline:?}");
        }
    }

    let stats = node.stats(id).expect("own subscription");
    let samples = std::mem::take(&mut *samples.lock().unwrap());
    let result = SubscriberResult {
        index,
        received: stats.received,
        stale: stats.stale,
        gaps: stats.dropped,
        decode_errors: stats.decode_errors,
        first_sequence: stats.first_sequence,
        last_sequence: stats.last_sequence,
        corrupt: samples.corrupt,
        latencies_us: samples.latencies_us,
        copied_bytes: instrument::copied_bytes(),
    };
    write_json(out, &result)
}
