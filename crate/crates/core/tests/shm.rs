use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use proptest::prelude::*;
use tzc_core::shm::{
    region_name, AllocError, AttachError, Policy, Region, RegionOptions, RegionWriter, ShmError, ValidatedView,
    ARENA_OFFSET, BLOCK_HEADER_BYTES, POISON_BYTE,
};

fn writer(mem: u64, policy: Policy) -> RegionWriter {
    RegionWriter::create(&region_name("shm-test"), RegionOptions::new(mem).policy(policy)).unwrap()
}

#[test]
fn create_then_open_sees_empty_region() {
    let w = writer(1 << 20, Policy::default());
    let r = Region::open(w.name()).unwrap();
    assert_eq!(r.capacity(), 1 << 20);
    assert_eq!(r.incarnation(), w.region().incarnation());
    let snap = r.snapshot().unwrap();
    assert!(snap.blocks.is_empty());
    assert_eq!((snap.head, snap.tail, snap.cursor), (0, 0, ARENA_OFFSET));
}

#[test]
fn name_collision_and_missing_region() {
    let w = writer(4096, Policy::default());
    assert!(matches!(
        RegionWriter::create(w.name(), RegionOptions::new(4096)),
        Err(ShmError::NameCollision(_))
    ));
    assert!(matches!(Region::open("tzc.0000000000000000.missing"), Err(ShmError::NotFound(_))));
    let name = w.name().to_owned();
    drop(w);
    assert!(matches!(Region::open(&name), Err(ShmError::NotFound(_))));
}

#[test]
fn invalid_sizes_and_policies_rejected() {
    assert!(matches!(
        RegionWriter::create(&region_name("t"), RegionOptions::new(BLOCK_HEADER_BYTES - 1)),
        Err(ShmError::InvalidSize(_))
    ));
    for p in [Policy::Blocking, Policy::Medium { max_attempts: 0 }] {
        assert!(matches!(
            RegionWriter::create(&region_name("t"), RegionOptions::new(4096).policy(p)),
            Err(ShmError::InvalidPolicy(_))
        ));
    }
}

#[test]
fn overwritten_region_magic_is_corruption() {
    let w = writer(4096, Policy::default());
    let cname = std::ffi::CString::new(format!("/{}", w.name())).unwrap();
    unsafe {
        let fd = libc::shm_open(cname.as_ptr(), libc::O_RDWR, 0);
        assert!(fd >= 0);
        assert_eq!(libc::pwrite(fd, b"XXXXXXXX".as_ptr().cast(), 8, 0), 8);
        libc::close(fd);
    }
    assert!(matches!(Region::open(w.name()), Err(ShmError::Corrupt { .. })));
}

#[test]
fn third_allocation_reclaims_oldest() {
    let mut w = writer(1000, Policy::BestEffort);
    let a = w.allocate(300).unwrap();
    let a_at = (a.offset(), a.magic());
    let b = w.allocate(300).unwrap();
    drop(a);
    // Laziness: rc 0 but still intact until pressure.
    assert_eq!(w.region().magic_at(a_at.0), a_at.1);
    let c = w.allocate(300).unwrap();
    assert_eq!(c.offset(), a_at.0);
    assert_ne!(c.magic(), a_at.1);
    assert_eq!(w.region().attach(a_at.0, a_at.1).unwrap_err(), AttachError::Stale);
    drop((b, c));
}

#[test]
fn third_allocation_fails_when_everything_is_referenced() {
    for policy in [Policy::BestEffort, Policy::WorstEffort, Policy::Medium { max_attempts: 3 }] {
        let mut w = writer(1000, policy);
        let _a = w.allocate(300).unwrap();
        let _b = w.allocate(300).unwrap();
        assert_eq!(w.allocate(300).unwrap_err(), AllocError::Exhausted { requested: 300 }, "{policy}");
        w.region().snapshot().unwrap();
    }
}

#[test]
fn zero_byte_block() {
    let mut w = writer(1000, Policy::default());
    let h = w.allocate(0).unwrap();
    assert!(h.payload().is_empty());
    let v = w.region().attach(h.offset(), h.magic()).unwrap();
    assert!(v.payload().is_empty());
    assert_eq!(w.region().refcount(h.offset()), 2);
}

#[test]
fn worst_effort_discards_when_oldest_is_referenced() {
    let mut w = writer(1000, Policy::WorstEffort);
    let a = w.allocate(200).unwrap();
    let b = w.allocate(200).unwrap();
    let b_at = (b.offset(), b.magic());
    drop(b);
    let _c = w.allocate(200).unwrap();
    // a is referenced: fail without touching the unreferenced b.
    assert!(matches!(w.allocate(400), Err(AllocError::Exhausted { .. })));
    assert_eq!(w.region().magic_at(b_at.0), b_at.1);
    // Once a is released, reclamation from the head proceeds.
    drop(a);
    assert!(w.allocate(400).is_ok());
}

#[test]
fn worst_effort_stops_at_first_referenced_block() {
    let mut w = writer(1000, Policy::WorstEffort);
    let a = w.allocate(200).unwrap();
    let b = w.allocate(200).unwrap();
    let c = w.allocate(200).unwrap();
    let c_at = (c.offset(), c.magic());
    drop(a);
    drop(c);
    // Frees a, then hits b: c must survive even though 600 B can't fit.
    assert!(w.allocate(600).is_err());
    assert_eq!(w.region().magic_at(c_at.0), c_at.1);
    drop(b);
}

#[test]
fn reclaim_pass_frees_only_unreferenced() {
    let mut w = writer(4096, Policy::BestEffort);
    let a = w.allocate(64).unwrap();
    let b = w.allocate(64).unwrap();
    let c = w.allocate(64).unwrap();
    let (a_at, b_at, c_at) = (a.offset(), b.offset(), c.offset());
    drop(a);
    drop(c);
    assert_eq!(w.reclaim_unreferenced(), 2);
    assert_eq!(w.region().magic_at(a_at), 0);
    assert_eq!(w.region().magic_at(c_at), 0);
    assert_eq!(w.region().magic_at(b_at), b.magic());
    let snap = w.region().snapshot().unwrap();
    assert_eq!(snap.blocks.len(), 1);
    assert_eq!((snap.head, snap.tail), (b_at, b_at));
    assert_eq!(w.reclaim_unreferenced(), 0);
    drop(b);
    assert_eq!(w.reclaim_unreferenced(), 1);
    assert_eq!(w.reclaim_unreferenced(), 0);
}

#[test]
fn refcount_lifecycle() {
    let mut w = writer(4096, Policy::default());
    let h = w.allocate(16).unwrap();
    let (off, magic) = (h.offset(), h.magic());
    let sub = Region::open(w.name()).unwrap();
    assert_eq!(sub.refcount(off), 1);
    let v = sub.attach(off, magic).unwrap();
    assert_eq!(sub.refcount(off), 2);
    drop(h);
    assert_eq!(sub.refcount(off), 1);
    drop(v);
    assert_eq!(sub.refcount(off), 0);
    assert_eq!(sub.magic_at(off), magic);
    let again = sub.attach(off, magic).unwrap();
    assert_eq!(sub.refcount(off), 1);
    drop(again);
}

#[test]
fn attach_rejections() {
    let mut w = writer(4096, Policy::default());
    let h = w.allocate(16).unwrap();
    let r = Region::open(w.name()).unwrap();
    assert_eq!(r.attach(h.offset(), h.magic() ^ 1).unwrap_err(), AttachError::Stale);
    assert_eq!(r.attach(h.offset(), 0).unwrap_err(), AttachError::Stale);
    assert_eq!(r.refcount(h.offset()), 1);
    for off in [0, 8, ARENA_OFFSET + 4, ARENA_OFFSET + 4096, u64::MAX - 7] {
        assert_eq!(r.attach(off, h.magic()).unwrap_err(), AttachError::OutOfBounds { offset: off });
    }
    // A different block's header with its own magic is stale for ours.
    let other = w.allocate(16).unwrap();
    assert_eq!(r.attach(other.offset(), h.magic()).unwrap_err(), AttachError::Stale);
}

#[test]
fn reused_slot_is_stale_for_old_magic() {
    let mut w = writer(200, Policy::BestEffort);
    let a = w.allocate(100).unwrap();
    let old = (a.offset(), a.magic());
    drop(a);
    let b = w.allocate(150).unwrap();
    assert_eq!(b.offset(), old.0);
    assert_eq!(w.region().attach(old.0, old.1).unwrap_err(), AttachError::Stale);
    assert_eq!(w.region().refcount(b.offset()), 1);
}

#[test]
fn poison_on_reclaim() {
    let opts = RegionOptions::new(1000).policy(Policy::BestEffort).poison_on_reclaim(true);
    let mut w = RegionWriter::create(&region_name("poison"), opts).unwrap();
    let mut h = w.allocate(64).unwrap();
    h.payload_mut().fill(7);
    let sub = Region::open(w.name()).unwrap();
    assert!(sub.poison_enabled());
    let v = sub.attach(h.offset(), h.magic()).unwrap();
    let p = v.payload().as_ptr();
    drop((v, h));
    assert_eq!(w.reclaim_unreferenced(), 1);
    // `sub` keeps the mapping alive; the dead bytes are readable through it.
    let dead = unsafe { std::slice::from_raw_parts(p, 64) };
    assert!(dead.iter().all(|&b| b == POISON_BYTE));
}

#[cfg(debug_assertions)]
#[test]
#[should_panic(expected = "double release")]
fn double_release_panics_in_debug() {
    let mut w = writer(1000, Policy::default());
    let h = w.allocate(8).unwrap();
    let r = Arc::clone(w.region());
    r.release(h.offset(), h.magic());
    drop(h);
}

#[cfg(debug_assertions)]
#[test]
#[should_panic(expected = "double release")]
fn release_of_reclaimed_block_panics_in_debug() {
    let mut w = writer(1000, Policy::default());
    let h = w.allocate(8).unwrap();
    let at = (h.offset(), h.magic());
    drop(h);
    w.reclaim_unreferenced();
    w.region().release(at.0, at.1);
}

#[test]
fn view_is_read_only() {
    let mut w = writer(4096, Policy::default());
    let mut h = w.allocate(64).unwrap();
    h.payload_mut().fill(0x5A);
    let r = Region::open(w.name()).unwrap();
    let v = r.attach(h.offset(), h.magic()).unwrap();
    assert!(v.payload().iter().all(|&b| b == 0x5A));
    let p = v.payload().as_ptr() as *mut u8;
    let pid = unsafe { libc::fork() };
    assert!(pid >= 0);
    if pid == 0 {
        unsafe {
            std::ptr::write_volatile(p, 1);
            libc::_exit(0);
        }
    }
    let mut status = 0;
    assert_eq!(unsafe { libc::waitpid(pid, &mut status, 0) }, pid);
    assert!(libc::WIFSIGNALED(status), "child wrote through a read-only view");
    assert!(matches!(libc::WTERMSIG(status), libc::SIGSEGV | libc::SIGBUS));
    assert_eq!(v.payload()[0], 0x5A);
}

/// Readers race a writer that reclaims aggressively; every view that
/// validates must see its own pattern, never poison.
#[test]
fn concurrent_attach_never_sees_poison() {
    let opts = RegionOptions::new(16 * 1024).policy(Policy::BestEffort).poison_on_reclaim(true);
    let mut w = RegionWriter::create(&region_name("race"), opts).unwrap();
    let readers = 3;
    let mut txs = Vec::new();
    let mut joins = Vec::new();
    let done = Arc::new(AtomicBool::new(false));
    for _ in 0..readers {
        let (tx, rx) = mpsc::channel::<(u64, u64, u8)>();
        txs.push(tx);
        let r = Region::open(w.name()).unwrap();
        let done = Arc::clone(&done);
        joins.push(thread::spawn(move || {
            let (mut ok, mut stale) = (0u64, 0u64);
            let mut held: Vec<(ValidatedView, u8)> = Vec::new();
            while let Ok((off, magic, pat)) = rx.recv() {
                match r.attach(off, magic) {
                    Ok(v) => {
                        assert!(v.payload().iter().all(|&b| b == pat), "torn or poisoned view");
                        ok += 1;
                        if ok % 3 == 0 {
                            held.push((v, pat));
                        }
                    }
                    Err(AttachError::Stale) => stale += 1,
                    Err(e) => panic!("{e}"),
                }
                if held.len() > 4 {
                    let (v, pat) = held.remove(0);
                    assert!(v.payload().iter().all(|&b| b == pat));
                }
            }
            assert!(done.load(Ordering::Acquire));
            (ok, stale)
        }));
    }
    for i in 0..20_000u32 {
        let pat = (i % 127) as u8;
        let size = 64 + (i as u64 * 97) % 2000;
        let Ok(mut h) = w.allocate(size) else { continue };
        h.payload_mut().fill(pat);
        for tx in &txs {
            tx.send((h.offset(), h.magic(), pat)).unwrap();
        }
        if i % 64 == 0 {
            thread::yield_now();
        }
    }
    done.store(true, Ordering::Release);
    drop(txs);
    let mut total_ok = 0;
    for j in joins {
        total_ok += j.join().unwrap().0;
    }
    assert!(total_ok > 0);
    w.region().snapshot().unwrap();
}

#[derive(Debug, Clone)]
enum Op {
    Alloc(u64),
    DropOwner(usize),
    Attach(usize),
    DropView(usize),
    Reclaim,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..400).prop_map(Op::Alloc),
        2 => any::<usize>().prop_map(Op::DropOwner),
        2 => any::<usize>().prop_map(Op::Attach),
        2 => any::<usize>().prop_map(Op::DropView),
        1 => Just(Op::Reclaim),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Model check: structure stays consistent, refcounts match held
    /// handles, and live payloads keep their contents.
    #[test]
    fn allocator_model(ops in proptest::collection::vec(op(), 1..120), policy_pick in 0..3u8) {
        let policy = [Policy::BestEffort, Policy::WorstEffort, Policy::Medium { max_attempts: 2 }][policy_pick as usize];
        let mut w = writer(2048, policy);
        let r = Region::open(w.name()).unwrap();
        let mut owners = Vec::new();
        let mut views: Vec<ValidatedView> = Vec::new();
        // Every block ever published: (offset, magic, fill byte).
        let mut published: Vec<(u64, u64, u8)> = Vec::new();
        for (i, op) in ops.into_iter().enumerate() {
            match op {
                Op::Alloc(n) => {
                    if let Ok(mut h) = w.allocate(n) {
                        let fill = (i % 200) as u8 + 1;
                        h.payload_mut().fill(fill);
                        published.push((h.offset(), h.magic(), fill));
                        owners.push(h);
                    }
                }
                Op::DropOwner(k) if !owners.is_empty() => { owners.remove(k % owners.len()); }
                Op::DropView(k) if !views.is_empty() => { views.remove(k % views.len()); }
                Op::Attach(k) if !published.is_empty() => {
                    let (off, magic, fill) = published[k % published.len()];
                    if let Ok(v) = r.attach(off, magic) {
                        prop_assert!(v.payload().iter().all(|&b| b == fill));
                        views.push(v);
                    }
                }
                Op::Reclaim => { w.reclaim_unreferenced(); }
                _ => {}
            }
            let snap = r.snapshot().map_err(TestCaseError::fail)?;
            for b in &snap.blocks {
                let expected = owners.iter().filter(|h| h.offset() == b.offset).count()
                    + views.iter().filter(|v| v.offset() == b.offset).count();
                prop_assert_eq!(b.refcount as usize, expected);
            }
            for v in &views {
                let fill = published.iter().find(|p| p.1 == v.magic()).unwrap().2;
                prop_assert!(v.payload().iter().all(|&b| b == fill));
            }
        }
    }
}
