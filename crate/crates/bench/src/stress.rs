//! Multi-process lifetime stress for shared regions.
//!
//! The coordinator owns a region with poison-on-reclaim enabled. It keeps
//! allocating blocks, filling them with a pattern derived from the block
//! magic, posting `(offset, magic)` into a shared mailbox and dropping its
//! own reference, so reclamation races with the workers. Workers attach
//! random mailbox entries, hold them for a while, check the pattern on
//! attach and again before release, and count what they see.
//!
//! At every checkpoint the coordinator pauses the workers. Once all of them
//! have released everything, every live block must have refcount 0 and
//! each worker's attach and release counts must agree.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use tzc_core::shm::{region_name, AttachError, Region, RegionOptions, RegionWriter, ValidatedView, POISON_BYTE};
use tzc_core::Policy;
use wait_timeout::ChildExt;

/// Default run length, overridable through this variable (seconds).
pub const STRESS_SECS_ENV: &str = "TZC_STRESS_SECS";
pub const DEFAULT_STRESS_SECS: u64 = 600;

const MAX_WORKERS: usize = 8;
const SLOTS: usize = 64;

const W_STOP: usize = 0;
const W_PAUSE: usize = 1;
const W_RESUME: usize = 2;
const WORKER_BASE: usize = 8;
const WORKER_WORDS: usize = 8;
const SLOT_BASE: usize = WORKER_BASE + MAX_WORKERS * WORKER_WORDS;
const SLOT_WORDS: usize = 4;
const MAILBOX_WORDS: usize = SLOT_BASE + SLOTS * SLOT_WORDS;

// Per-worker counters.
const C_ACK: usize = 0;
const C_ATTACH: usize = 1;
const C_RELEASE: usize = 2;
const C_STALE: usize = 3;
const C_POISON: usize = 4;
const C_MISMATCH: usize = 5;
const C_ERROR: usize = 6;

/// A shared file mapping of `MAILBOX_WORDS` atomics.
struct Mailbox {
    ptr: *mut AtomicU64,
    _file: File,
}

impl Mailbox {
    fn map(path: &Path, create: bool) -> anyhow::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create(create).truncate(create).open(path)?;
        let len = MAILBOX_WORDS * 8;
        if create {
            file.set_len(len as u64)?;
        }
        use std::os::fd::AsRawFd;
        // SAFETY: mapping a file we hold open; length matches its size.
        let ptr = unsafe {
            libc::mmap(std::ptr::null_mut(), len, libc::PROT_READ | libc::PROT_WRITE, libc::MAP_SHARED, file.as_raw_fd(), 0)
        };
        if ptr == libc::MAP_FAILED {
            return Err(std::io::Error::last_os_error()).context("mapping mailbox");
        }
        Ok(Mailbox { ptr: ptr.cast(), _file: file })
    }

    fn word(&self, i: usize) -> &AtomicU64 {
        assert!(i < MAILBOX_WORDS);
        // SAFETY: in bounds of a live, 8-aligned shared mapping.
        unsafe { &*self.ptr.add(i) }
    }

    fn counter(&self, worker: usize, c: usize) -> &AtomicU64 {
        self.word(WORKER_BASE + worker * WORKER_WORDS + c)
    }

    fn post(&self, slot: usize, offset: u64, magic: u64) {
        let base = SLOT_BASE + slot * SLOT_WORDS;
        let seq = self.word(base).load(Ordering::Relaxed);
        self.word(base).store(seq + 1, Ordering::Relaxed);
        std::sync::atomic::fence(Ordering::Release);
        self.word(base + 1).store(offset, Ordering::Relaxed);
        self.word(base + 2).store(magic, Ordering::Relaxed);
        self.word(base).store(seq + 2, Ordering::Release);
    }

    fn read(&self, slot: usize) -> Option<(u64, u64)> {
        let base = SLOT_BASE + slot * SLOT_WORDS;
        let s1 = self.word(base).load(Ordering::Acquire);
        if s1 == 0 || s1 % 2 == 1 {
            return None;
        }
        let offset = self.word(base + 1).load(Ordering::Relaxed);
        let magic = self.word(base + 2).load(Ordering::Relaxed);
        std::sync::atomic::fence(Ordering::Acquire);
        (self.word(base).load(Ordering::Relaxed) == s1).then_some((offset, magic))
    }
}

impl Drop for Mailbox {
    fn drop(&mut self) {
        // SAFETY: unmapping our own mapping.
        unsafe { libc::munmap(self.ptr.cast(), MAILBOX_WORDS * 8) };
    }
}

/// Payload byte `i` of the block with `magic`. Never the poison byte.
pub fn pattern_byte(magic: u64, i: usize) -> u8 {
    let x = (magic ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    match (x >> 56) as u8 {
        POISON_BYTE => 0x5A,
        b => b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Check {
    Intact,
    Poisoned,
    Mismatch,
}

fn check(view: &ValidatedView) -> Check {
    let p = view.payload();
    if p.iter().enumerate().all(|(i, &b)| b == pattern_byte(view.magic(), i)) {
        Check::Intact
    } else if p.contains(&POISON_BYTE) {
        Check::Poisoned
    } else {
        Check::Mismatch
    }
}

#[derive(Debug, Clone)]
pub struct StressConfig {
    pub duration: Duration,
    pub workers: usize,
    pub region_size: u64,
    pub max_block: u64,
    pub checkpoint_every: Duration,
    pub seed: u64,
}

impl Default for StressConfig {
    fn default() -> Self {
        let secs = std::env::var(STRESS_SECS_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_STRESS_SECS);
        StressConfig {
            duration: Duration::from_secs(secs),
            workers: 3,
            region_size: 1 << 20,
            max_block: 16 << 10,
            checkpoint_every: Duration::from_secs(2),
            seed: rand::random(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressReport {
    pub elapsed_ms: u64,
    pub workers: usize,
    pub checkpoints: u64,
    pub allocations: u64,
    pub exhausted: u64,
    pub reclaimed: u64,
    pub attaches: u64,
    pub releases: u64,
    pub stale: u64,
    pub poison_observations: u64,
    pub pattern_mismatches: u64,
    pub refcount_violations: u64,
    pub worker_errors: u64,
    pub notes: Vec<String>,
}

impl StressReport {
    pub fn passed(&self) -> bool {
        self.poison_observations == 0
            && self.pattern_mismatches == 0
            && self.refcount_violations == 0
            && self.worker_errors == 0
            && self.checkpoints > 0
            && self.attaches > 0
    }
}

fn spawn_worker(exe: &Path, mailbox: &Path, region: &str, index: usize, seed: u64, life: Duration) -> anyhow::Result<Child> {
    Command::new(exe)
        .args(["worker", "stress", "--mailbox"])
        .arg(mailbox)
        .args(["--region", region, "--index", &index.to_string(), "--seed", &seed.to_string()])
        .args(["--max-secs", &life.as_secs().to_string()])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
        .context("spawning stress worker")
}

/// Runs the coordinator and its workers; `exe` is the `tzc-bench` binary.
pub fn run_stress(exe: &Path, config: &StressConfig) -> anyhow::Result<StressReport> {
    if config.workers == 0 || config.workers > MAX_WORKERS {
        bail!("workers must be 1..={MAX_WORKERS}");
    }
    let dir = tempfile::tempdir()?;
    let mailbox_path: PathBuf = dir.path().join("mailbox");
    let mailbox = Mailbox::map(&mailbox_path, true)?;
    let opts = RegionOptions::new(config.region_size).policy(Policy::BestEffort).poison_on_reclaim(true);
    let mut writer = RegionWriter::create(&region_name("/tzc_stress"), opts)?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(config.seed);

    let life = config.duration + Duration::from_secs(120);
    let mut children = Vec::new();
    for w in 0..config.workers {
        children.push(spawn_worker(exe, &mailbox_path, writer.name(), w, config.seed ^ (w as u64 + 1), life)?);
    }

    let mut report = StressReport { workers: config.workers, ..Default::default() };
    let start = Instant::now();
    let mut next_checkpoint = start + config.checkpoint_every;
    let mut epoch = 0u64;
    while start.elapsed() < config.duration {
        match writer.allocate(rng.gen_range(0..=config.max_block)) {
            Ok(mut block) => {
                let magic = block.magic();
                for (i, b) in block.payload_mut().iter_mut().enumerate() {
                    *b = pattern_byte(magic, i);
                }
                mailbox.post(rng.gen_range(0..SLOTS), block.offset(), magic);
                report.allocations += 1;
            }
            Err(_) => report.exhausted += 1,
        }
        if rng.gen_ratio(1, 64) {
            report.reclaimed += writer.reclaim_unreferenced() as u64;
        }
        if rng.gen_ratio(1, 8) {
            std::thread::yield_now();
        }
        if Instant::now() >= next_checkpoint {
            epoch += 1;
            checkpoint(&mailbox, &mut writer, config.workers, epoch, &mut report);
            next_checkpoint = Instant::now() + config.checkpoint_every;
        }
    }
    epoch += 1;
    checkpoint(&mailbox, &mut writer, config.workers, epoch, &mut report);
    mailbox.word(W_STOP).store(1, Ordering::Release);

    for (w, mut child) in children.into_iter().enumerate() {
        match child.wait_timeout(Duration::from_secs(30))? {
            Some(status) if status.success() => {}
            Some(status) => {
                report.worker_errors += 1;
                report.notes.push(format!("worker {w} exited with {status}"));
            }
            None => {
                let _ = child.kill();
                let _ = child.wait();
                report.worker_errors += 1;
                report.notes.push(format!("worker {w} did not stop"));
            }
        }
        report.attaches += mailbox.counter(w, C_ATTACH).load(Ordering::Acquire);
        report.releases += mailbox.counter(w, C_RELEASE).load(Ordering::Acquire);
        report.stale += mailbox.counter(w, C_STALE).load(Ordering::Acquire);
        report.poison_observations += mailbox.counter(w, C_POISON).load(Ordering::Acquire);
        report.pattern_mismatches += mailbox.counter(w, C_MISMATCH).load(Ordering::Acquire);
        report.worker_errors += mailbox.counter(w, C_ERROR).load(Ordering::Acquire);
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

fn checkpoint(mailbox: &Mailbox, writer: &mut RegionWriter, workers: usize, epoch: u64, report: &mut StressReport) {
    mailbox.word(W_PAUSE).store(epoch, Ordering::Release);
    let deadline = Instant::now() + Duration::from_secs(20);
    while (0..workers).any(|w| mailbox.counter(w, C_ACK).load(Ordering::Acquire) < epoch) {
        if Instant::now() > deadline {
            report.refcount_violations += 1;
            report.notes.push(format!("checkpoint {epoch}: workers did not quiesce"));
            mailbox.word(W_RESUME).store(epoch, Ordering::Release);
            return;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    for w in 0..workers {
        let a = mailbox.counter(w, C_ATTACH).load(Ordering::Acquire);
        let r = mailbox.counter(w, C_RELEASE).load(Ordering::Acquire);
        if a != r {
            report.refcount_violations += 1;
            report.notes.push(format!("checkpoint {epoch}: worker {w} attached {a}, released {r}"));
        }
    }
    match writer.region().snapshot() {
        Ok(snap) => {
            for b in snap.blocks.iter().filter(|b| b.refcount != 0) {
                report.refcount_violations += 1;
                report.notes.push(format!("checkpoint {epoch}: block {} has refcount {}", b.offset, b.refcount));
            }
        }
        Err(e) => {
            report.refcount_violations += 1;
            report.notes.push(format!("checkpoint {epoch}: {e}"));
        }
    }
    // Every other checkpoint, everything must be reclaimable.
    if epoch.is_multiple_of(2) {
        report.reclaimed += writer.reclaim_unreferenced() as u64;
        if writer.live_blocks() != 0 {
            report.refcount_violations += 1;
            report.notes.push(format!("checkpoint {epoch}: {} blocks not reclaimable", writer.live_blocks()));
        }
    }
    report.checkpoints += 1;
    mailbox.word(W_RESUME).store(epoch, Ordering::Release);
}

struct Held {
    view: ValidatedView,
    until: Instant,
}

/// One stress worker process.
pub fn run_worker(mailbox: &Path, region: &str, index: usize, seed: u64, max: Duration) -> anyhow::Result<()> {
    if index >= MAX_WORKERS {
        bail!("worker index {index} out of range");
    }
    let mailbox = Mailbox::map(mailbox, false)?;
    let region = Region::open(region)?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut held: Vec<Held> = Vec::new();
    let count = |c: usize| {
        mailbox.counter(index, c).fetch_add(1, Ordering::AcqRel);
    };
    let release = |h: Held| {
        match check(&h.view) {
            Check::Intact => {}
            Check::Poisoned => count(C_POISON),
            Check::Mismatch => count(C_MISMATCH),
        }
        drop(h);
        count(C_RELEASE);
    };
    let start = Instant::now();
    while mailbox.word(W_STOP).load(Ordering::Acquire) == 0 && start.elapsed() < max {
        let pause = mailbox.word(W_PAUSE).load(Ordering::Acquire);
        if pause > mailbox.counter(index, C_ACK).load(Ordering::Relaxed) {
            held.drain(..).for_each(&release);
            mailbox.counter(index, C_ACK).store(pause, Ordering::Release);
            while mailbox.word(W_RESUME).load(Ordering::Acquire) < pause && mailbox.word(W_STOP).load(Ordering::Acquire) == 0 {
                std::thread::sleep(Duration::from_micros(200));
            }
            continue;
        }
        let now = Instant::now();
        if let Some(i) = held.iter().position(|h| h.until <= now) {
            release(held.swap_remove(i));
        }
        if held.len() < 16 {
            if let Some((offset, magic)) = mailbox.read(rng.gen_range(0..SLOTS)) {
                match region.attach(offset, magic) {
                    Ok(view) => {
                        count(C_ATTACH);
                        match check(&view) {
                            Check::Intact => {}
                            Check::Poisoned => count(C_POISON),
                            Check::Mismatch => count(C_MISMATCH),
                        }
                        let until = now + Duration::from_micros(rng.gen_range(0..3000));
                        held.push(Held { view, until });
                    }
                    Err(AttachError::Stale) => count(C_STALE),
                    Err(_) => count(C_ERROR),
                }
            }
        }
        if rng.gen_ratio(1, 4) {
            std::thread::yield_now();
        }
    }
    held.drain(..).for_each(release);
    Ok(())
}
