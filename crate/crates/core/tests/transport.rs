use std::os::unix::net::UnixListener;
use std::time::{Duration, Instant};

use tzc_core::transport::{socket_path, PublisherEndpoint, SubscriberLink, TransportConfig, TransportError};

fn config(root: &std::path::Path) -> TransportConfig {
    TransportConfig { rescan_interval: Duration::from_millis(50), ..TransportConfig::with_root(root) }
}

/// Services the publisher until `n` subscribers are accepted.
fn accept(publisher: &mut PublisherEndpoint, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while publisher.connection_count() < n {
        assert!(Instant::now() < deadline, "subscribers never connected");
        publisher.service(Duration::from_millis(10));
    }
}

fn recv_all(link: &mut SubscriberLink, n: usize) -> Vec<Vec<u8>> {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut got = Vec::new();
    while got.len() < n && Instant::now() < deadline {
        got.extend(link.poll_wait(Duration::from_millis(100)).into_iter().map(|r| r.bytes));
    }
    got
}

#[test]
fn socket_lives_at_derived_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = PublisherEndpoint::listen(dir.path(), "images", "u1").unwrap();
    let expected = dir.path().join("tzc/images/u1.sock");
    assert_eq!(p.endpoint().socket_path, expected);
    assert_eq!(socket_path(dir.path(), "images", "u1").unwrap(), expected);
    assert!(expected.exists());
    drop(p);
    assert!(!expected.exists());
}

#[test]
fn two_publishers_one_topic() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = PublisherEndpoint::listen(dir.path(), "t", "a").unwrap();
    let mut b = PublisherEndpoint::listen(dir.path(), "t", "b").unwrap();
    let mut link = SubscriberLink::new("t", config(dir.path())).unwrap();
    assert_eq!(link.connection_count(), 2);
    accept(&mut a, 1);
    accept(&mut b, 1);
    for i in 0..3u8 {
        a.broadcast(&[b'a', i]);
        b.broadcast(&[b'b', i]);
    }
    let got = recv_all(&mut link, 6);
    assert_eq!(got.len(), 6);
    let from_a: Vec<_> = got.iter().filter(|m| m[0] == b'a').map(|m| m[1]).collect();
    let from_b: Vec<_> = got.iter().filter(|m| m[0] == b'b').map(|m| m[1]).collect();
    assert_eq!(from_a, vec![0, 1, 2]);
    assert_eq!(from_b, vec![0, 1, 2]);
}

#[test]
fn live_socket_collides_stale_socket_is_replaced() {
    let dir = tempfile::tempdir().unwrap();
    let live = PublisherEndpoint::listen(dir.path(), "t", "same").unwrap();
    assert!(matches!(PublisherEndpoint::listen(dir.path(), "t", "same"), Err(TransportError::PathInUse(_))));
    drop(live);

    // A listener that goes away without unlinking, as after kill -9.
    let path = socket_path(dir.path(), "t", "dead").unwrap();
    drop(UnixListener::bind(&path).unwrap());
    assert!(path.exists());
    let mut p = PublisherEndpoint::listen(dir.path(), "t", "dead").unwrap();
    let mut link = SubscriberLink::new("t", config(dir.path())).unwrap();
    accept(&mut p, 1);
    p.broadcast(b"hello");
    assert_eq!(recv_all(&mut link, 1), vec![b"hello".to_vec()]);
}

#[test]
fn broadcast_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PublisherEndpoint::listen(dir.path(), "t", "p").unwrap();
    assert_eq!(p.broadcast(b"nobody").delivered, 0);
    let mut links: Vec<_> = (0..3).map(|_| SubscriberLink::new("t", config(dir.path())).unwrap()).collect();
    accept(&mut p, 3);
    let out = p.broadcast(b"x");
    assert_eq!((out.delivered, out.dropped), (3, 0));
    for l in &mut links {
        assert_eq!(recv_all(l, 1), vec![b"x".to_vec()]);
    }
}

#[test]
fn saturated_subscriber_drops_newest() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PublisherEndpoint::listen(dir.path(), "t", "p").unwrap();
    let mut fast: Vec<_> = (0..2).map(|_| SubscriberLink::new("t", config(dir.path())).unwrap()).collect();
    accept(&mut p, 2);
    let _slow = SubscriberLink::new("t", config(dir.path())).unwrap();
    accept(&mut p, 3);

    let msg = vec![7u8; 64 * 1024];
    let total = 200;
    let mut delivered = 0;
    let mut dropped = 0;
    let mut got = vec![0usize; 2];
    for _ in 0..total {
        let start = Instant::now();
        let out = p.broadcast(&msg);
        assert!(start.elapsed() < Duration::from_millis(500), "broadcast blocked");
        delivered += out.delivered;
        dropped += out.dropped;
        for (i, l) in fast.iter_mut().enumerate() {
            got[i] += l.poll_wait(Duration::from_millis(1)).len();
        }
        p.service(Duration::ZERO);
    }
    assert!(dropped > 0, "the paused subscriber never saturated");
    assert_eq!(delivered + dropped, 3 * total);
    p.finish();
    for (i, l) in fast.iter_mut().enumerate() {
        let deadline = Instant::now() + Duration::from_secs(5);
        while got[i] < total && Instant::now() < deadline {
            p.service(Duration::from_millis(1));
            got[i] += l.poll_wait(Duration::from_millis(10)).len();
        }
    }
    // The draining subscribers lose nothing; all drops hit the paused one.
    let stats = p.connection_stats();
    assert_eq!(stats.iter().map(|s| s.dropped).sum::<u64>() as usize, dropped);
    assert_eq!(stats[2].dropped as usize, dropped);
    assert_eq!(got, vec![total, total]);
}

#[test]
fn poll_times_out_without_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let _p = PublisherEndpoint::listen(dir.path(), "t", "p").unwrap();
    let mut link = SubscriberLink::new("t", config(dir.path())).unwrap();
    let start = Instant::now();
    assert!(link.poll_wait(Duration::from_millis(200)).is_empty());
    let waited = start.elapsed();
    assert!(waited >= Duration::from_millis(190) && waited < Duration::from_secs(2), "{waited:?}");
}

#[test]
fn subscriber_discovers_late_publisher() {
    let dir = tempfile::tempdir().unwrap();
    let mut link = SubscriberLink::new("late", config(dir.path())).unwrap();
    assert_eq!(link.connection_count(), 0);
    assert!(link.poll_wait(Duration::from_millis(20)).is_empty());
    let mut p = PublisherEndpoint::listen(dir.path(), "late", "p").unwrap();
    // Within two rescan intervals.
    let deadline = Instant::now() + Duration::from_millis(100);
    while link.connection_count() == 0 && Instant::now() < deadline {
        link.poll_wait(Duration::from_millis(10));
    }
    assert_eq!(link.connection_count(), 1);
    accept(&mut p, 1);
    p.broadcast(b"hi");
    assert_eq!(recv_all(&mut link, 1), vec![b"hi".to_vec()]);
}

#[test]
fn finish_delivers_queued_frames_then_eof() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PublisherEndpoint::listen(dir.path(), "t", "p").unwrap();
    let mut link = SubscriberLink::new("t", config(dir.path())).unwrap();
    accept(&mut p, 1);
    for i in 0..5u8 {
        p.broadcast(&[i]);
    }
    assert!(p.drain(Duration::from_secs(1)));
    p.finish();
    assert!(!p.endpoint().socket_path.exists());
    assert_eq!(recv_all(&mut link, 5).len(), 5);
    // EOF drops the connection; the publisher sees it go.
    link.poll_wait(Duration::from_millis(50));
    assert_eq!(link.connection_count(), 0);
    drop(link);
    assert!(p.wait_closed(Duration::from_secs(2)));
}

#[test]
fn oversize_frame_closes_connection() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PublisherEndpoint::listen(dir.path(), "t", "p").unwrap();
    let cfg = TransportConfig { max_frame: 16, ..config(dir.path()) };
    let mut link = SubscriberLink::new("t", cfg).unwrap();
    accept(&mut p, 1);
    p.broadcast(&[0u8; 17]);
    let deadline = Instant::now() + Duration::from_secs(2);
    while link.framing_errors() == 0 && Instant::now() < deadline {
        assert!(link.poll_wait(Duration::from_millis(20)).is_empty());
    }
    assert_eq!(link.framing_errors(), 1);
}
