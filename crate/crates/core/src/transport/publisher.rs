use std::io;
use std::os::fd::AsRawFd;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{duration_to_poll_ms, frame, TopicEndpoint, TransportError};

/// Result of one [`PublisherEndpoint::broadcast`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BroadcastOutcome {
    /// Connections that took the frame (possibly still being flushed).
    pub delivered: usize,
    /// Connections that skipped it because an earlier frame was still queued.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionStats {
    pub id: u64,
    pub delivered: u64,
    pub dropped: u64,
}

struct Conn {
    id: u64,
    stream: UnixStream,
    /// A frame that did not fit the socket buffer, and how much of it is sent.
    pending: Option<(Arc<[u8]>, usize)>,
    delivered: u64,
    dropped: u64,
    /// Peer hung up or errored; removed on the next sweep.
    dead: bool,
}

enum Progress {
    Done,
    Blocked,
    Failed,
}

impl Conn {
    fn push(&mut self, buf: &Arc<[u8]>, mut pos: usize) -> Progress {
        while pos < buf.len() {
            let rest = &buf[pos..];
            // MSG_NOSIGNAL: a vanished peer is an error, not SIGPIPE.
            let n = unsafe {
                libc::send(
                    self.stream.as_raw_fd(),
                    rest.as_ptr().cast(),
                    rest.len(),
                    libc::MSG_NOSIGNAL | libc::MSG_DONTWAIT,
                )
            };
            if n < 0 {
                let err = io::Error::last_os_error();
                match err.kind() {
                    io::ErrorKind::WouldBlock => {
                        self.pending = Some((Arc::clone(buf), pos));
                        return Progress::Blocked;
                    }
                    io::ErrorKind::Interrupted => continue,
                    _ => {
                        self.dead = true;
                        self.pending = None;
                        return Progress::Failed;
                    }
                }
            }
            pos += n as usize;
        }
        self.pending = None;
        Progress::Done
    }

    fn flush(&mut self) -> Progress {
        match self.pending.take() {
            Some((buf, pos)) => self.push(&buf, pos),
            None => Progress::Done,
        }
    }
}

/// The publisher side: one listening socket and its accepted connections.
/// Never blocks on a subscriber.
pub struct PublisherEndpoint {
    endpoint: TopicEndpoint,
    listener: Option<UnixListener>,
    conns: Vec<Conn>,
    next_id: u64,
    /// Stats of connections that have since closed.
    closed: Vec<ConnectionStats>,
}

impl std::fmt::Debug for PublisherEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PublisherEndpoint")
            .field("endpoint", &self.endpoint)
            .field("connections", &self.conns.len())
            .finish()
    }
}

impl PublisherEndpoint {
    pub fn listen(root: &Path, topic: &str, uuid: &str) -> Result<Self, TransportError> {
        let endpoint = TopicEndpoint::new(root, topic, uuid)?;
        let path = &endpoint.socket_path;
        let dir = path.parent().expect("socket path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| TransportError::io("create", dir, e))?;
        if path.exists() {
            // A file left by a dead process refuses connections.
            if UnixStream::connect(path).is_ok() {
                return Err(TransportError::PathInUse(path.clone()));
            }
            std::fs::remove_file(path).map_err(|e| TransportError::io("remove stale", path, e))?;
            log::info!("replaced stale socket {}", path.display());
        }
        let listener = UnixListener::bind(path).map_err(|e| TransportError::io("bind", path, e))?;
        listener.set_nonblocking(true).map_err(|e| TransportError::io("configure", path, e))?;
        Ok(PublisherEndpoint { endpoint, listener: Some(listener), conns: Vec::new(), next_id: 0, closed: Vec::new() })
    }

    pub fn endpoint(&self) -> &TopicEndpoint {
        &self.endpoint
    }

    pub fn connection_count(&self) -> usize {
        self.conns.iter().filter(|c| !c.dead).count()
    }

    /// Accepts every connection waiting in the backlog.
    pub fn accept_pending(&mut self) -> usize {
        let Some(listener) = &self.listener else { return 0 };
        let mut n = 0;
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    if stream.set_nonblocking(true).is_err() {
                        continue;
                    }
                    self.conns.push(Conn {
                        id: self.next_id,
                        stream,
                        pending: None,
                        delivered: 0,
                        dropped: 0,
                        dead: false,
                    });
                    self.next_id += 1;
                    n += 1;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => return n,
            }
        }
    }

    /// Sends one envelope to every connection. A connection still holding
    /// an unsent earlier frame drops this one.
    pub fn broadcast(&mut self, envelope: &[u8]) -> BroadcastOutcome {
        self.accept_pending();
        let buf: Arc<[u8]> = frame(envelope).into();
        let mut out = BroadcastOutcome::default();
        for c in &mut self.conns {
            if matches!(c.flush(), Progress::Blocked) {
                c.dropped += 1;
                out.dropped += 1;
                continue;
            }
            if c.dead {
                continue;
            }
            match c.push(&buf, 0) {
                Progress::Done | Progress::Blocked => {
                    c.delivered += 1;
                    out.delivered += 1;
                }
                Progress::Failed => {}
            }
        }
        self.sweep();
        out
    }

    fn sweep(&mut self) {
        let closed = &mut self.closed;
        self.conns.retain(|c| {
            if c.dead {
                closed.push(ConnectionStats { id: c.id, delivered: c.delivered, dropped: c.dropped });
            }
            !c.dead
        });
    }

    /// True if some connection still has queued bytes.
    pub fn has_pending(&self) -> bool {
        self.conns.iter().any(|c| c.pending.is_some())
    }

    /// Waits up to `timeout` for new connections or writable sockets with
    /// queued bytes, then accepts and flushes.
    pub fn service(&mut self, timeout: Duration) {
        let mut fds = Vec::with_capacity(self.conns.len() + 1);
        if let Some(l) = &self.listener {
            fds.push(libc::pollfd { fd: l.as_raw_fd(), events: libc::POLLIN, revents: 0 });
        }
        for c in self.conns.iter().filter(|c| c.pending.is_some()) {
            fds.push(libc::pollfd { fd: c.stream.as_raw_fd(), events: libc::POLLOUT, revents: 0 });
        }
        unsafe {
            libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, duration_to_poll_ms(timeout));
        }
        self.accept_pending();
        for c in &mut self.conns {
            c.flush();
        }
        self.sweep();
    }

    /// Keeps servicing until queued bytes are written or `timeout` passes.
    pub fn drain(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if !self.has_pending() {
                return true;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            self.service(left.min(Duration::from_millis(50)));
            if !self.has_pending() {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
        }
    }

    /// Per-connection counters, closed connections included, by id.
    pub fn connection_stats(&self) -> Vec<ConnectionStats> {
        let mut all: Vec<_> = self.closed.clone();
        all.extend(self.conns.iter().map(|c| ConnectionStats { id: c.id, delivered: c.delivered, dropped: c.dropped }));
        all.sort_by_key(|s| s.id);
        all
    }

    /// Stops accepting, removes the socket file and half-closes every
    /// connection so subscribers see end-of-stream after the queued data.
    pub fn finish(&mut self) {
        if self.listener.take().is_some() {
            let _ = std::fs::remove_file(&self.endpoint.socket_path);
        }
        for c in &mut self.conns {
            let _ = c.stream.shutdown(std::net::Shutdown::Write);
        }
    }

    /// After [`finish`](Self::finish): waits until every peer has closed its
    /// end. Returns false on timeout.
    pub fn wait_closed(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut scratch = [0u8; 4096];
        loop {
            for c in &mut self.conns {
                loop {
                    let n = unsafe {
                        libc::recv(c.stream.as_raw_fd(), scratch.as_mut_ptr().cast(), scratch.len(), libc::MSG_DONTWAIT)
                    };
                    if n > 0 {
                        continue;
                    }
                    if n == 0 || io::Error::last_os_error().kind() != io::ErrorKind::WouldBlock {
                        c.dead = true;
                    }
                    break;
                }
            }
            self.sweep();
            let now = Instant::now();
            if self.conns.is_empty() {
                return true;
            }
            if now >= deadline {
                return false;
            }
            let mut fds: Vec<_> = self
                .conns
                .iter()
                .map(|c| libc::pollfd { fd: c.stream.as_raw_fd(), events: libc::POLLIN, revents: 0 })
                .collect();
            unsafe {
                libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, duration_to_poll_ms(deadline - now));
            }
        }
    }
}

impl Drop for PublisherEndpoint {
    fn drop(&mut self) {
        if self.listener.take().is_some() {
            let _ = std::fs::remove_file(&self.endpoint.socket_path);
        }
    }
}
