use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::case::{CaseConfig, Transport};

/// Nearest-rank percentile of an ascending-sorted slice; `p` in (0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubscriberReport {
    pub index: u32,
    pub received: u64,
    pub stale: u64,
    /// Everything the subscriber did not get from the socket: publisher-side
    /// drops, including any before its first and after its last envelope.
    pub dropped: u64,
    pub decode_errors: u64,
    /// Payloads whose first or last byte did not match the sequence.
    pub corrupt: u64,
    /// Latency of each received message, in microseconds, arrival order.
    pub latencies_us: Vec<f64>,
    /// DATA bytes copied inside the subscriber process.
    pub copied_bytes: u64,
}

impl SubscriberReport {
    pub fn sorted_latencies(&self) -> Vec<f64> {
        let mut v = self.latencies_us.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn accounted(&self) -> u64 {
        self.received + self.stale + self.dropped + self.decode_errors
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub config: CaseConfig,
    /// Envelopes actually sent (allocation failures excluded).
    pub published: u64,
    pub alloc_failures: u64,
    pub subscribers: Vec<SubscriberReport>,
    pub publisher_copied_bytes: u64,
    /// Largest envelope sent, framing excluded.
    pub max_envelope_bytes: u64,
    /// Publisher-side `(delivered, dropped)` per subscriber connection.
    pub connections: Vec<(u64, u64)>,
    pub valid: bool,
    pub errors: Vec<String>,
}

impl CaseReport {
    pub fn copied_bytes(&self) -> u64 {
        self.publisher_copied_bytes + self.subscribers.iter().map(|s| s.copied_bytes).sum::<u64>()
    }

    pub fn pooled_latencies(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.subscribers.iter().flat_map(|s| s.latencies_us.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn p50_us(&self) -> Option<f64> {
        percentile(&self.pooled_latencies(), 50.0)
    }

    /// `(stale + dropped) / published`, over all subscribers.
    pub fn loss_rate(&self) -> f64 {
        let expected = self.published * self.subscribers.len() as u64;
        if expected == 0 {
            return 0.0;
        }
        let lost: u64 = self.subscribers.iter().map(|s| s.stale + s.dropped).sum();
        lost as f64 / expected as f64
    }

    /// Residual of `published == received + stale + dropped + decode_errors`
    /// per subscriber, plus the publisher-side cross-check. Empty when every
    /// message is accounted for exactly.
    pub fn accounting_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.subscribers {
            if s.accounted() != self.published {
                out.push(format!("subscriber {}: accounted {} of {}", s.index, s.accounted(), self.published));
            }
            if s.latencies_us.len() as u64 != s.received {
                out.push(format!("subscriber {}: {} samples for {} received", s.index, s.latencies_us.len(), s.received));
            }
        }
        if self.connections.len() == self.subscribers.len() {
            for (i, &(delivered, dropped)) in self.connections.iter().enumerate() {
                if delivered + dropped != self.published {
                    out.push(format!("connection {i}: {delivered} delivered + {dropped} dropped != {}", self.published));
                }
            }
            let sent: u64 = self.connections.iter().map(|c| c.1).sum();
            let missed: u64 = self.subscribers.iter().map(|s| s.dropped).sum();
            if sent != missed {
                out.push(format!("publisher dropped {sent}, subscribers missed {missed}"));
            }
        } else {
            out.push(format!("{} connections for {} subscribers", self.connections.len(), self.subscribers.len()));
        }
        out
    }
}

#[derive(Debug, Serialize)]
struct SubscriberRow<'a> {
    case_id: &'a str,
    transport: Transport,
    size_bytes: u64,
    sub_index: u32,
    published: u64,
    received: u64,
    stale: u64,
    dropped: u64,
    p50_us: Option<f64>,
    p90_us: Option<f64>,
    p99_us: Option<f64>,
    copied_bytes: u64,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    case_id: &'a str,
    transport: Transport,
    size_bytes: u64,
    subscribers: u32,
    published: u64,
    received: u64,
    stale: u64,
    dropped: u64,
    loss_rate: f64,
    p50_us: Option<f64>,
    p90_us: Option<f64>,
    p99_us: Option<f64>,
    copied_bytes: u64,
    max_envelope_bytes: u64,
    valid: bool,
}

/// One row per (case, subscriber). Subscriber `copied_bytes` counts the
/// subscriber process only; publisher copies are in the summary.
pub fn write_subscriber_csv<W: io::Write>(reports: &[CaseReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for s in &r.subscribers {
            let lat = s.sorted_latencies();
            w.serialize(SubscriberRow {
                case_id: &r.case_id,
                transport: r.config.transport,
                size_bytes: r.config.payload_size,
                sub_index: s.index,
                published: r.published,
                received: s.received,
                stale: s.stale,
                dropped: s.dropped,
                p50_us: percentile(&lat, 50.0),
                p90_us: percentile(&lat, 90.0),
                p99_us: percentile(&lat, 99.0),
                copied_bytes: s.copied_bytes,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: io::Write>(reports: &[CaseReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in sorted(reports) {
        let lat = r.pooled_latencies();
        w.serialize(SummaryRow {
            case_id: &r.case_id,
            transport: r.config.transport,
            size_bytes: r.config.payload_size,
            subscribers: r.config.subscribers,
            published: r.published,
            received: r.subscribers.iter().map(|s| s.received).sum(),
            stale: r.subscribers.iter().map(|s| s.stale).sum(),
            dropped: r.subscribers.iter().map(|s| s.dropped).sum(),
            loss_rate: r.loss_rate(),
            p50_us: percentile(&lat, 50.0),
            p90_us: percentile(&lat, 90.0),
            p99_us: percentile(&lat, 99.0),
            copied_bytes: r.copied_bytes(),
            max_envelope_bytes: r.max_envelope_bytes,
            valid: r.valid,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn sorted(reports: &[CaseReport]) -> Vec<&CaseReport> {
    let mut v: Vec<&CaseReport> = reports.iter().collect();
    v.sort_by(|a, b| {
        let key = |r: &CaseReport| (r.config.transport, r.config.payload_size, r.config.subscribers);
        key(a).cmp(&key(b)).then_with(|| a.case_id.cmp(&b.case_id))
    });
    v
}

/// Human-readable table, one row per case, ordered by transport, size and
/// subscriber count. Copy-baseline rows get the p50 ratio against the
/// smallest size with the same subscriber count.
pub fn summarize(reports: &[CaseReport]) -> String {
    let rows = sorted(reports);
    let mut out = String::new();
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.1}"));
    let _ = writeln!(
        out,
        "{:<32} {:>9} {:>4} {:>6} {:>9} {:>9} {:>9} {:>7} {:>8} {:>14} {:>6}",
        "case", "size", "subs", "pub", "p50_us", "p90_us", "p99_us", "loss%", "p50/min", "copied_bytes", "valid"
    );
    for r in &rows {
        let lat = r.pooled_latencies();
        let p50 = percentile(&lat, 50.0);
        let base = rows
            .iter()
            .filter(|o| o.config.transport == r.config.transport && o.config.subscribers == r.config.subscribers)
            .min_by_key(|o| o.config.payload_size)
            .and_then(|o| o.p50_us());
        let ratio = match (p50, base) {
            (Some(a), Some(b)) if b > 0.0 => format!("{:.2}", a / b),
            _ => "-".to_owned(),
        };
        let _ = writeln!(
            out,
            "{:<32} {:>9} {:>4} {:>6} {:>9} {:>9} {:>9} {:>7.2} {:>8} {:>14} {:>6}",
            r.case_id,
            r.config.payload_size,
            r.config.subscribers,
            r.published,
            fmt(p50),
            fmt(percentile(&lat, 90.0)),
            fmt(percentile(&lat, 99.0)),
            100.0 * r.loss_rate(),
            ratio,
            r.copied_bytes(),
            r.valid
        );
    }
    out
}
