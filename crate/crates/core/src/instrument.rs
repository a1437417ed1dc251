//! Data-payload copy accounting.
//!
//! Every code path that copies bytes belonging to a DATA segment (a
//! variable-length array of fixed-length elements) reports them here. The
//! zero-copy path never calls [`record_copy`]; the full-serialization codec,
//! the deep-copy helper and the copy baseline do.
//!
//! Counters are per thread so concurrently running tests do not observe each
//! other's traffic.

use std::cell::Cell;

thread_local! {
    static COPIED: Cell<u64> = const { Cell::new(0) };
}

/// Adds `bytes` to the calling thread's copy counter.
pub fn record_copy(bytes: u64) {
    COPIED.with(|c| c.set(c.get().saturating_add(bytes)));
}

/// Data-payload bytes copied on this thread since the last [`reset`].
pub fn copied_bytes() -> u64 {
    COPIED.with(Cell::get)
}

pub fn reset() {
    COPIED.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the bytes it copied.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = copied_bytes();
    let out = f();
    (out, copied_bytes() - before)
}
