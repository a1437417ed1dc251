//! Latency and reliability harness for `tzc-core`.
//!
//! Every case runs one publisher process and `subscribers` subscriber
//! processes, all re-executions of the `tzc-bench` binary in its hidden
//! `worker` mode. Latency is measured from the publisher's timestamp taken
//! just before `publish` to the first instruction of the subscriber
//! callback, both read from `CLOCK_MONOTONIC`, which is shared by all
//! processes on one machine.

pub mod case;
pub mod matrix;
pub mod report;
pub mod stress;
pub mod worker;

pub use case::{run_case, CaseConfig, Transport};
pub use matrix::{run_matrix, MatrixConfig};
pub use report::{percentile, summarize, CaseReport, SubscriberReport};

/// Schema of the benchmark message.
pub const BENCH_SCHEMA: &str = "tzc_bench/BenchMessage";
pub const BENCH_TOPIC: &str = "/tzc_bench/payload";

/// Nanoseconds on `CLOCK_MONOTONIC`.
pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer.
    unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// The bundled schema registry, with the benchmark message loaded.
pub fn bench_registry() -> anyhow::Result<tzc_core::SchemaRegistry> {
    let mut registry = tzc_core::SchemaRegistry::new();
    registry.load_corpus(&tzc_core::schema::bundled_corpus_dir())?;
    Ok(registry)
}
