use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tzc_core::shm::BLOCK_HEADER_BYTES;
use tzc_core::transport::RUNTIME_DIR_ENV;
use tzc_core::Policy;
use wait_timeout::ChildExt;

use crate::report::{CaseReport, SubscriberReport};
use crate::worker::{PublisherResult, SubscriberResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Tzc,
    CopyBaseline,
}

impl std::str::FromStr for Transport {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tzc" => Ok(Transport::Tzc),
            "copy" | "copy_baseline" | "baseline" => Ok(Transport::CopyBaseline),
            other => bail!("unknown transport `{other}` (expected tzc or copy)"),
        }
    }
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Transport::Tzc => "tzc",
            Transport::CopyBaseline => "copy_baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseConfig {
    pub payload_size: u64,
    pub subscribers: u32,
    pub message_count: u64,
    pub publish_rate_hz: f64,
    pub transport: Transport,
    /// Allocation policy, as accepted by `Policy::from_str`.
    pub policy: String,
    /// Region bytes; 0 picks room for 16 messages.
    pub region_size: u64,
    /// Extra time subscriber 0 spends in each callback.
    pub slow_subscriber_ms: u64,
}

impl Default for CaseConfig {
    fn default() -> Self {
        CaseConfig {
            payload_size: 4096,
            subscribers: 1,
            message_count: 1000,
            publish_rate_hz: 30.0,
            transport: Transport::Tzc,
            policy: Policy::default().to_string(),
            region_size: 0,
            slow_subscriber_ms: 0,
        }
    }
}

impl CaseConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.publish_rate_hz.is_finite() && self.publish_rate_hz > 0.0) {
            bail!("publish rate must be positive, got {}", self.publish_rate_hz);
        }
        if self.subscribers == 0 || self.message_count == 0 {
            bail!("subscriber and message counts must be positive");
        }
        self.policy()?;
        Ok(())
    }

    pub fn policy(&self) -> anyhow::Result<Policy> {
        Ok(self.policy.parse::<Policy>()?)
    }

    pub fn effective_region_size(&self) -> u64 {
        if self.region_size > 0 {
            return self.region_size;
        }
        (16 * (self.payload_size + BLOCK_HEADER_BYTES + 64)).max(1 << 20)
    }

    pub fn case_id(&self) -> String {
        let slow = if self.slow_subscriber_ms > 0 { format!("-slow{}", self.slow_subscriber_ms) } else { String::new() };
        format!("{}-{}-s{}{slow}", self.transport, self.payload_size, self.subscribers)
    }

    /// Nominal publishing time.
    pub fn duration(&self) -> Duration {
        Duration::from_secs_f64(self.message_count as f64 / self.publish_rate_hz)
    }
}

/// How long a worker may outlive the nominal schedule before it is killed.
fn grace(config: &CaseConfig) -> Duration {
    let slow = Duration::from_millis(config.slow_subscriber_ms.saturating_mul(config.message_count));
    Duration::from_secs(60) + slow
}

struct Worker {
    label: String,
    child: Child,
    result: PathBuf,
}

fn spawn(exe: &Path, dir: &Path, role: &str, index: u32, case: &Path) -> anyhow::Result<Worker> {
    let label = format!("{role}-{index}");
    let result = dir.join(format!("{label}.json"));
    let log = fs::File::create(dir.join(format!("{label}.log")))?;
    let child = Command::new(exe)
        .arg("worker")
        .arg(role)
        .arg("--case")
        .arg(case)
        .arg("--index")
        .arg(index.to_string())
        .arg("--out")
        .arg(&result)
        .env(RUNTIME_DIR_ENV, dir.join("run"))
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .spawn()
        .with_context(|| format!("spawning {}", exe.display()))?;
    Ok(Worker { label, child, result })
}

/// Waits for `w`; on failure or timeout the returned error says why and the
/// child is killed.
fn finish(w: &mut Worker, timeout: Duration, dir: &Path) -> Result<(), String> {
    let status = match w.child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = w.child.kill();
            let _ = w.child.wait();
            return Err(format!("{} timed out after {timeout:?}", w.label));
        }
        Err(e) => return Err(format!("{}: {e}", w.label)),
    };
    if status.success() {
        return Ok(());
    }
    let log = fs::read_to_string(dir.join(format!("{}.log", w.label))).unwrap_or_default();
    let tail: Vec<&str> = log.lines().rev().take(5).collect();
    Err(format!("{} exited with {status}: {}", w.label, tail.into_iter().rev().collect::<Vec<_>>().join(" | ")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

/// Runs one case: `subscribers` subscriber workers, then one publisher
/// worker. Worker failures mark the report invalid; whatever results were
/// written are kept.
pub fn run_case(exe: &Path, config: &CaseConfig) -> anyhow::Result<CaseReport> {
    config.validate()?;
    let dir = tempfile::Builder::new().prefix("tzc-bench-").tempdir()?;
    fs::create_dir_all(dir.path().join("run"))?;
    let case = dir.path().join("case.json");
    fs::write(&case, serde_json::to_vec_pretty(config)?)?;

    let mut subs = Vec::new();
    for i in 0..config.subscribers {
        subs.push(spawn(exe, dir.path(), "sub", i, &case)?);
    }
    let mut publisher = spawn(exe, dir.path(), "pub", 0, &case)?;

    let budget = config.duration() + grace(config);
    let mut errors = Vec::new();
    if let Err(e) = finish(&mut publisher, budget, dir.path()) {
        errors.push(e);
    }
    for s in &mut subs {
        if let Err(e) = finish(s, Duration::from_secs(30), dir.path()) {
            errors.push(e);
        }
    }

    let mut report = CaseReport { case_id: config.case_id(), config: config.clone(), ..CaseReport::default() };
    match read_json::<PublisherResult>(&publisher.result) {
        Some(p) => {
            report.published = p.published;
            report.alloc_failures = p.alloc_failures;
            report.publisher_copied_bytes = p.copied_bytes;
            report.max_envelope_bytes = p.max_envelope_bytes;
            report.connections = p.connections;
            if p.connected < config.subscribers as usize {
                errors.push(format!("only {} of {} subscribers connected", p.connected, config.subscribers));
            }
        }
        None => errors.push("publisher wrote no result".into()),
    }
    for s in &subs {
        match read_json::<SubscriberResult>(&s.result) {
            Some(r) => report.subscribers.push(r.into_report(report.published)),
            None => {
                errors.push(format!("{} wrote no result", s.label));
            }
        }
    }
    report.subscribers.sort_by_key(|s: &SubscriberReport| s.index);
    report.valid = errors.is_empty();
    report.errors = errors;
    Ok(report)
}
