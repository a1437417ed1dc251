use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::mapping::{self, Mapping, ShmFd};
use super::{AllocError, AttachError, Policy, ShmError, POISON_BYTE};

pub const REGION_HEADER_BYTES: u64 = 64;
/// Region offset of the first arena byte. Offset 0 means "no block".
pub const ARENA_OFFSET: u64 = REGION_HEADER_BYTES;
pub const BLOCK_HEADER_BYTES: u64 = 40;

const REGION_MAGIC: u64 = u64::from_le_bytes(*b"TZCREGN1");
const REGION_VERSION: u64 = 1;
const FLAG_POISON: u64 = 1 << 32;

// Region header words.
const H_MAGIC: u64 = 0;
const H_VERSION_FLAGS: u64 = 8;
const H_TOTAL: u64 = 16;
const H_CURSOR: u64 = 24;
const H_HEAD: u64 = 32;
const H_TAIL: u64 = 40;
const H_COUNTER: u64 = 48;
const H_SEED: u64 = 56;

// Block header words. The refcount word holds the count in its low half
// and a tag derived from the block's magic in its high half, so one CAS
// both checks identity and changes the count.
const B_MAGIC: u64 = 0;
const B_RC: u64 = 8;
const B_PREV: u64 = 16;
const B_NEXT: u64 = 24;
const B_LEN: u64 = 32;

/// Refcount value held while the owner tears a block down.
const RECLAIMING: u32 = u32::MAX;

fn tag_of(magic: u64) -> u32 {
    (magic ^ (magic >> 32)) as u32
}

fn rc_word(tag: u32, rc: u32) -> u64 {
    (u64::from(tag) << 32) | u64::from(rc)
}

fn align8(n: u64) -> Option<u64> {
    Some(n.checked_add(7)? & !7)
}

/// A mapped region, shared by the owner and any number of attachers.
pub struct Region {
    name: String,
    rw: Mapping,
    ro: Mapping,
    arena_bytes: u64,
    poison: bool,
    owner: bool,
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Region").field("name", &self.name).field("arena_bytes", &self.arena_bytes).finish()
    }
}

impl Drop for Region {
    fn drop(&mut self) {
        if self.owner {
            mapping::unlink(&self.name);
        }
    }
}

impl Region {
    fn word(&self, offset: u64) -> &AtomicU64 {
        assert!(offset.is_multiple_of(8) && offset + 8 <= self.rw.len() as u64, "word offset {offset} out of range");
        // SAFETY: in bounds, 8-aligned (mmap is page-aligned) and the mapping
        // outlives `self`.
        unsafe { &*(self.rw.as_ptr().add(offset as usize) as *const AtomicU64) }
    }

    /// Maps an existing region read/write; payload views use a separate
    /// read-only mapping.
    pub fn open(name: &str) -> Result<Arc<Region>, ShmError> {
        let fd = ShmFd::open(name)?;
        let size = fd.size()?;
        let corrupt = |reason: String| ShmError::Corrupt { name: name.to_owned(), reason };
        if size < REGION_HEADER_BYTES + BLOCK_HEADER_BYTES {
            return Err(corrupt(format!("object is only {size} bytes")));
        }
        let len = usize::try_from(size).map_err(|_| ShmError::InvalidSize(size))?;
        let rw = fd.map(len, true)?;
        let ro = fd.map(len, false)?;
        let mut region = Region { name: name.to_owned(), rw, ro, arena_bytes: 0, poison: false, owner: false };
        if region.word(H_MAGIC).load(Ordering::Acquire) != REGION_MAGIC {
            return Err(corrupt("bad region magic".into()));
        }
        let vf = region.word(H_VERSION_FLAGS).load(Ordering::Acquire);
        if vf & 0xFFFF_FFFF != REGION_VERSION {
            return Err(corrupt(format!("unsupported version {}", vf & 0xFFFF_FFFF)));
        }
        let total = region.word(H_TOTAL).load(Ordering::Acquire);
        if total.checked_add(REGION_HEADER_BYTES) != Some(size) {
            return Err(corrupt(format!("header says {total} arena bytes, object has {size}")));
        }
        region.arena_bytes = total;
        region.poison = vf & FLAG_POISON != 0;
        Ok(Arc::new(region))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Bytes available to blocks (headers included).
    pub fn capacity(&self) -> u64 {
        self.arena_bytes
    }

    pub fn poison_enabled(&self) -> bool {
        self.poison
    }

    /// Random seed chosen at creation; differs between incarnations of a name.
    pub fn incarnation(&self) -> u64 {
        self.word(H_SEED).load(Ordering::Acquire)
    }

    fn check_block_offset(&self, offset: u64) -> Result<(), AttachError> {
        let end = ARENA_OFFSET + self.arena_bytes;
        if offset < ARENA_OFFSET || !offset.is_multiple_of(8) || offset.checked_add(BLOCK_HEADER_BYTES).is_none_or(|e| e > end) {
            return Err(AttachError::OutOfBounds { offset });
        }
        Ok(())
    }

    /// Takes one reference on the block at `offset` if it still carries
    /// `magic`. Returns its payload length. Leaves no trace on failure.
    pub fn acquire(&self, offset: u64, magic: u64) -> Result<u64, AttachError> {
        self.check_block_offset(offset)?;
        if magic == 0 || self.word(offset + B_MAGIC).load(Ordering::Acquire) != magic {
            return Err(AttachError::Stale);
        }
        let tag = tag_of(magic);
        let rc = self.word(offset + B_RC);
        let mut w = rc.load(Ordering::Acquire);
        loop {
            let (t, n) = ((w >> 32) as u32, w as u32);
            if t != tag || n == RECLAIMING {
                return Err(AttachError::Stale);
            }
            if n == RECLAIMING - 1 {
                return Err(AttachError::RefcountOverflow);
            }
            match rc.compare_exchange_weak(w, w + 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => break,
                Err(now) => w = now,
            }
        }
        // The slot may have been reclaimed and reused between the first
        // check and the increment; the full magic tells.
        if self.word(offset + B_MAGIC).load(Ordering::Acquire) != magic {
            self.decrement(offset, tag);
            return Err(AttachError::Stale);
        }
        let len = self.word(offset + B_LEN).load(Ordering::Acquire);
        let end = ARENA_OFFSET + self.arena_bytes;
        if (offset + BLOCK_HEADER_BYTES).checked_add(len).is_none_or(|e| e > end) {
            self.decrement(offset, tag);
            return Err(AttachError::OutOfBounds { offset });
        }
        Ok(len)
    }

    /// Drops one reference taken by [`acquire`](Self::acquire) or allocation.
    /// Never reclaims. Releasing a block that holds no reference panics in
    /// debug builds and is logged and ignored otherwise.
    pub fn release(&self, offset: u64, magic: u64) {
        if self.check_block_offset(offset).is_err() {
            return double_release(offset, "offset out of bounds");
        }
        self.decrement(offset, tag_of(magic));
    }

    fn decrement(&self, offset: u64, tag: u32) {
        let rc = self.word(offset + B_RC);
        let mut w = rc.load(Ordering::Acquire);
        loop {
            let (t, n) = ((w >> 32) as u32, w as u32);
            if t != tag || n == 0 || n == RECLAIMING {
                return double_release(offset, "no reference held");
            }
            match rc.compare_exchange_weak(w, w - 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return,
                Err(now) => w = now,
            }
        }
    }

    /// Current refcount of the block at `offset` (racy outside quiescence).
    pub fn refcount(&self, offset: u64) -> u32 {
        self.word(offset + B_RC).load(Ordering::Acquire) as u32
    }

    /// Current magic of the block at `offset`; 0 once reclaimed.
    pub fn magic_at(&self, offset: u64) -> u64 {
        self.word(offset + B_MAGIC).load(Ordering::Acquire)
    }

    pub fn attach(self: &Arc<Self>, offset: u64, magic: u64) -> Result<ValidatedView, AttachError> {
        let len = self.acquire(offset, magic)?;
        Ok(ValidatedView { region: Arc::clone(self), offset, magic, len })
    }

    fn payload_ptr(&self, map: &Mapping, offset: u64) -> *mut u8 {
        debug_assert!(offset + BLOCK_HEADER_BYTES <= map.len() as u64);
        // SAFETY: block offsets are bounds-checked before any handle exists.
        unsafe { map.as_ptr().add((offset + BLOCK_HEADER_BYTES) as usize) }
    }

    /// Walks the block list and checks its structure. Only meaningful while
    /// the owner is not allocating.
    pub fn snapshot(&self) -> Result<RegionSnapshot, String> {
        let end = ARENA_OFFSET + self.arena_bytes;
        let head = self.word(H_HEAD).load(Ordering::Acquire);
        let tail = self.word(H_TAIL).load(Ordering::Acquire);
        let cursor = self.word(H_CURSOR).load(Ordering::Acquire);
        if cursor < ARENA_OFFSET || cursor > end {
            return Err(format!("cursor {cursor} outside arena"));
        }
        let mut blocks = Vec::new();
        let mut prev = 0u64;
        let mut off = head;
        let limit = self.arena_bytes / BLOCK_HEADER_BYTES + 1;
        while off != 0 {
            if blocks.len() as u64 >= limit {
                return Err("block list has a cycle".into());
            }
            self.check_block_offset(off).map_err(|e| e.to_string())?;
            let w = self.word(off + B_RC).load(Ordering::Acquire);
            let info = BlockInfo {
                offset: off,
                magic: self.word(off + B_MAGIC).load(Ordering::Acquire),
                refcount: w as u32,
                payload_bytes: self.word(off + B_LEN).load(Ordering::Acquire),
                prev: self.word(off + B_PREV).load(Ordering::Acquire),
                next: self.word(off + B_NEXT).load(Ordering::Acquire),
            };
            if info.magic == 0 {
                return Err(format!("linked block {off} has zero magic"));
            }
            if (w >> 32) as u32 != tag_of(info.magic) || info.refcount == RECLAIMING {
                return Err(format!("linked block {off} has refcount word {w:#x}"));
            }
            if info.prev != prev {
                return Err(format!("block {off} prev is {} not {prev}", info.prev));
            }
            if info.end().is_none_or(|e| e > end) {
                return Err(format!("block {off} overruns the arena"));
            }
            prev = off;
            off = info.next;
            blocks.push(info);
        }
        if tail != prev {
            return Err(format!("tail is {tail}, last linked block is {prev}"));
        }
        let mut by_offset: Vec<&BlockInfo> = blocks.iter().collect();
        by_offset.sort_by_key(|b| b.offset);
        for pair in by_offset.windows(2) {
            if pair[0].end().expect("checked") > pair[1].offset {
                return Err(format!("blocks {} and {} overlap", pair[0].offset, pair[1].offset));
            }
        }
        Ok(RegionSnapshot { arena_bytes: self.arena_bytes, cursor, head, tail, blocks })
    }
}

#[cold]
fn double_release(offset: u64, why: &str) {
    if cfg!(debug_assertions) {
        panic!("double release of block {offset}: {why}");
    }
    log::error!("double release of block {offset}: {why}");
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub offset: u64,
    pub magic: u64,
    pub refcount: u32,
    pub payload_bytes: u64,
    pub prev: u64,
    pub next: u64,
}

impl BlockInfo {
    /// Region offset one past the block, padding included.
    pub fn end(&self) -> Option<u64> {
        (self.offset + BLOCK_HEADER_BYTES).checked_add(align8(self.payload_bytes)?)
    }
}

/// Blocks in list (allocation) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSnapshot {
    pub arena_bytes: u64,
    pub cursor: u64,
    pub head: u64,
    pub tail: u64,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionOptions {
    /// Arena bytes, block headers included.
    pub mem_size: u64,
    pub policy: Policy,
    /// Overwrite payloads with [`POISON_BYTE`] when they are reclaimed.
    pub poison_on_reclaim: bool,
}

impl RegionOptions {
    pub fn new(mem_size: u64) -> Self {
        RegionOptions { mem_size, policy: Policy::default(), poison_on_reclaim: false }
    }

    pub fn policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn poison_on_reclaim(mut self, on: bool) -> Self {
        self.poison_on_reclaim = on;
        self
    }
}

/// The single writer of a region. Dropping the last reference to the
/// region unlinks its name.
pub struct RegionWriter {
    region: Arc<Region>,
    policy: Policy,
    /// Live blocks by offset, with their full size.
    live: BTreeMap<u64, u64>,
    cursor: u64,
    seed: u64,
    counter: u64,
}

impl std::fmt::Debug for RegionWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegionWriter")
            .field("region", &self.region)
            .field("policy", &self.policy)
            .field("live", &self.live.len())
            .finish()
    }
}

impl RegionWriter {
    pub fn create(name: &str, opts: RegionOptions) -> Result<Self, ShmError> {
        let policy = opts.policy.validate()?;
        if opts.mem_size < BLOCK_HEADER_BYTES {
            return Err(ShmError::InvalidSize(opts.mem_size));
        }
        let total = opts.mem_size.checked_add(REGION_HEADER_BYTES).ok_or(ShmError::InvalidSize(opts.mem_size))?;
        let len = usize::try_from(total).map_err(|_| ShmError::InvalidSize(opts.mem_size))?;
        let fd = ShmFd::create(name, total)?;
        let maps = fd.map(len, true).and_then(|rw| Ok((rw, fd.map(len, false)?)));
        let (rw, ro) = match maps {
            Ok(m) => m,
            Err(e) => {
                mapping::unlink(name);
                return Err(e);
            }
        };
        let region = Region {
            name: name.to_owned(),
            rw,
            ro,
            arena_bytes: opts.mem_size,
            poison: opts.poison_on_reclaim,
            owner: true,
        };
        let seed = rand::random::<u64>();
        let flags = if opts.poison_on_reclaim { FLAG_POISON } else { 0 };
        region.word(H_VERSION_FLAGS).store(REGION_VERSION | flags, Ordering::Relaxed);
        region.word(H_TOTAL).store(opts.mem_size, Ordering::Relaxed);
        region.word(H_CURSOR).store(ARENA_OFFSET, Ordering::Relaxed);
        region.word(H_HEAD).store(0, Ordering::Relaxed);
        region.word(H_TAIL).store(0, Ordering::Relaxed);
        region.word(H_COUNTER).store(0, Ordering::Relaxed);
        region.word(H_SEED).store(seed, Ordering::Relaxed);
        region.word(H_MAGIC).store(REGION_MAGIC, Ordering::Release);
        Ok(RegionWriter { region: Arc::new(region), policy, live: BTreeMap::new(), cursor: ARENA_OFFSET, seed, counter: 0 })
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn name(&self) -> &str {
        self.region.name()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn live_blocks(&self) -> usize {
        self.live.len()
    }

    fn next_magic(&mut self) -> u64 {
        loop {
            self.counter = self.counter.wrapping_add(1);
            let m = self.seed ^ self.counter;
            // Tags made of one repeated byte would match uniformly filled
            // payload bytes (zeroes, poison) at a reused header position.
            let t = tag_of(m);
            if m != 0 && t != (t & 0xFF) * 0x0101_0101 {
                self.region.word(H_COUNTER).store(self.counter, Ordering::Release);
                return m;
            }
        }
    }

    /// Allocates a block with `payload_bytes` of payload and refcount 1.
    pub fn allocate(&mut self, payload_bytes: u64) -> Result<BlockHandle, AllocError> {
        let capacity = self.region.arena_bytes;
        let too_large = AllocError::TooLarge { requested: payload_bytes, capacity };
        let size = align8(payload_bytes).and_then(|p| p.checked_add(BLOCK_HEADER_BYTES)).ok_or(too_large.clone())?;
        if size > capacity {
            return Err(too_large);
        }
        if let Some(at) = self.find_gap(size) {
            return Ok(self.place(at, size, payload_bytes));
        }
        match self.policy {
            Policy::WorstEffort => {
                while let Some(&head) = self.live_head() {
                    if !self.try_reclaim(head) {
                        break;
                    }
                    if let Some(at) = self.find_gap(size) {
                        return Ok(self.place(at, size, payload_bytes));
                    }
                }
            }
            Policy::BestEffort => loop {
                let freed = self.reclaim_pass(Some(size));
                if let Some(at) = self.find_gap(size) {
                    return Ok(self.place(at, size, payload_bytes));
                }
                if freed == 0 {
                    break;
                }
            },
            Policy::Medium { max_attempts } => {
                for attempt in 0..max_attempts {
                    if attempt > 0 {
                        std::thread::yield_now();
                    }
                    self.reclaim_pass(Some(size));
                    if let Some(at) = self.find_gap(size) {
                        return Ok(self.place(at, size, payload_bytes));
                    }
                }
            }
            Policy::Blocking => unreachable!("rejected at creation"),
        }
        Err(AllocError::Exhausted { requested: payload_bytes })
    }

    fn live_head(&self) -> Option<&u64> {
        let head = self.region.word(H_HEAD).load(Ordering::Relaxed);
        self.live.get_key_value(&head).map(|(k, _)| k)
    }

    /// Frees every unreferenced block. Returns how many were freed.
    pub fn reclaim_unreferenced(&mut self) -> usize {
        self.reclaim_pass(None)
    }

    /// One oldest-first pass; stops early once `target` bytes fit.
    fn reclaim_pass(&mut self, target: Option<u64>) -> usize {
        let mut freed = 0;
        let mut off = self.region.word(H_HEAD).load(Ordering::Relaxed);
        while off != 0 {
            let next = self.region.word(off + B_NEXT).load(Ordering::Relaxed);
            if self.try_reclaim(off) {
                freed += 1;
                if target.is_some_and(|t| self.find_gap(t).is_some()) {
                    break;
                }
            }
            off = next;
        }
        freed
    }

    fn try_reclaim(&mut self, off: u64) -> bool {
        let r = &self.region;
        let magic = r.word(off + B_MAGIC).load(Ordering::Relaxed);
        let tag = tag_of(magic);
        if r.word(off + B_RC)
            .compare_exchange(rc_word(tag, 0), rc_word(tag, RECLAIMING), Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return false;
        }
        r.word(off + B_MAGIC).store(0, Ordering::Release);
        if r.poison {
            let len = r.word(off + B_LEN).load(Ordering::Relaxed) as usize;
            // SAFETY: nobody holds a reference and new ones fail on RECLAIMING.
            unsafe { std::ptr::write_bytes(r.payload_ptr(&r.rw, off), POISON_BYTE, len) };
        }
        let prev = r.word(off + B_PREV).load(Ordering::Relaxed);
        let next = r.word(off + B_NEXT).load(Ordering::Relaxed);
        match prev {
            0 => r.word(H_HEAD).store(next, Ordering::Release),
            p => r.word(p + B_NEXT).store(next, Ordering::Release),
        }
        match next {
            0 => r.word(H_TAIL).store(prev, Ordering::Release),
            n => r.word(n + B_PREV).store(prev, Ordering::Release),
        }
        self.live.remove(&off);
        if self.live.is_empty() {
            self.set_cursor(ARENA_OFFSET);
        }
        true
    }

    fn set_cursor(&mut self, at: u64) {
        self.cursor = at;
        self.region.word(H_CURSOR).store(at, Ordering::Release);
    }

    /// Next-fit: the first gap at or after the cursor, else the first gap
    /// from the arena start.
    fn find_gap(&self, size: u64) -> Option<u64> {
        let end = ARENA_OFFSET + self.region.arena_bytes;
        if self.live.is_empty() {
            return (size <= self.region.arena_bytes).then_some(ARENA_OFFSET);
        }
        let mut gaps = Vec::with_capacity(self.live.len() + 1);
        let mut at = ARENA_OFFSET;
        for (&off, &len) in &self.live {
            if off > at {
                gaps.push((at, off));
            }
            at = off + len;
        }
        if end > at {
            gaps.push((at, end));
        }
        let cursor = self.cursor;
        gaps.iter()
            .filter(|&&(_, b)| b > cursor)
            .map(|&(a, b)| (a.max(cursor), b))
            .chain(gaps.iter().copied().filter(|&(a, _)| a < cursor))
            .find(|&(a, b)| b - a >= size)
            .map(|(a, _)| a)
    }

    fn place(&mut self, at: u64, size: u64, payload_bytes: u64) -> BlockHandle {
        let magic = self.next_magic();
        let r = &self.region;
        if cfg!(debug_assertions) {
            // SAFETY: the gap overlaps no live block.
            unsafe { std::ptr::write_bytes(r.payload_ptr(&r.rw, at), 0, payload_bytes as usize) };
        }
        let tail = r.word(H_TAIL).load(Ordering::Relaxed);
        r.word(at + B_PREV).store(tail, Ordering::Relaxed);
        r.word(at + B_NEXT).store(0, Ordering::Relaxed);
        r.word(at + B_LEN).store(payload_bytes, Ordering::Relaxed);
        r.word(at + B_RC).store(rc_word(tag_of(magic), 1), Ordering::Release);
        r.word(at + B_MAGIC).store(magic, Ordering::Release);
        match tail {
            0 => r.word(H_HEAD).store(at, Ordering::Release),
            t => r.word(t + B_NEXT).store(at, Ordering::Release),
        }
        r.word(H_TAIL).store(at, Ordering::Release);
        self.live.insert(at, size);
        self.set_cursor(at + size);
        BlockHandle { region: Arc::clone(&self.region), offset: at, magic, len: payload_bytes }
    }
}

/// The owner's reference to a freshly allocated block. Releases on drop.
pub struct BlockHandle {
    region: Arc<Region>,
    offset: u64,
    magic: u64,
    len: u64,
}

impl std::fmt::Debug for BlockHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockHandle").field("offset", &self.offset).field("len", &self.len).finish()
    }
}

impl BlockHandle {
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn magic(&self) -> u64 {
        self.magic
    }

    pub fn payload_bytes(&self) -> u64 {
        self.len
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn payload(&self) -> &[u8] {
        // SAFETY: this handle keeps the block live.
        unsafe { std::slice::from_raw_parts(self.region.payload_ptr(&self.region.rw, self.offset), self.len as usize) }
    }

    pub fn payload_mut(&mut self) -> &mut [u8] {
        // SAFETY: only the owner writes payloads and each block has one handle.
        unsafe {
            std::slice::from_raw_parts_mut(self.region.payload_ptr(&self.region.rw, self.offset), self.len as usize)
        }
    }
}

impl Drop for BlockHandle {
    fn drop(&mut self) {
        self.region.release(self.offset, self.magic);
    }
}

/// A validated, referenced, read-only view of a block's payload.
pub struct ValidatedView {
    region: Arc<Region>,
    offset: u64,
    magic: u64,
    len: u64,
}

impl std::fmt::Debug for ValidatedView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValidatedView").field("offset", &self.offset).field("len", &self.len).finish()
    }
}

impl ValidatedView {
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn magic(&self) -> u64 {
        self.magic
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    /// Backed by a `PROT_READ` mapping: writes through it fault.
    pub fn payload(&self) -> &[u8] {
        // SAFETY: the reference keeps the block from being reclaimed.
        unsafe { std::slice::from_raw_parts(self.region.payload_ptr(&self.region.ro, self.offset), self.len as usize) }
    }
}

impl Drop for ValidatedView {
    fn drop(&mut self) {
        self.region.release(self.offset, self.magic);
    }
}
