use std::collections::HashSet;
use std::io::{self, Read};
use std::os::fd::{AsRawFd, RawFd};
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use super::{duration_to_poll_ms, topic_dir, TransportConfig, TransportError};

/// One complete frame and the publisher it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Received {
    /// The publisher's uuid (socket file stem).
    pub source: String,
    pub bytes: Vec<u8>,
}

struct InConn {
    path: PathBuf,
    source: String,
    stream: UnixStream,
    buf: Vec<u8>,
}

enum ReadState {
    Open,
    Closed,
    Oversize,
}

impl InConn {
    fn read_available(&mut self) -> ReadState {
        let mut chunk = [0u8; 64 * 1024];
        loop {
            match self.stream.read(&mut chunk) {
                Ok(0) => return ReadState::Closed,
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => return ReadState::Open,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => return ReadState::Closed,
            }
        }
    }

    fn take_frames(&mut self, max_frame: usize, out: &mut Vec<Received>) -> ReadState {
        let mut at = 0;
        let state = loop {
            let rest = &self.buf[at..];
            if rest.len() < 4 {
                break ReadState::Open;
            }
            let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            if len > max_frame {
                break ReadState::Oversize;
            }
            if rest.len() < 4 + len {
                break ReadState::Open;
            }
            out.push(Received { source: self.source.clone(), bytes: rest[4..4 + len].to_vec() });
            at += 4 + len;
        };
        self.buf.drain(..at);
        state
    }
}

/// The subscriber side of a topic: every live publisher socket, found by
/// rescanning the topic directory.
pub struct SubscriberLink {
    topic: String,
    dir: PathBuf,
    config: TransportConfig,
    conns: Vec<InConn>,
    connected: HashSet<PathBuf>,
    next_scan: Instant,
    framing_errors: u64,
}

impl std::fmt::Debug for SubscriberLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubscriberLink").field("topic", &self.topic).field("connections", &self.conns.len()).finish()
    }
}

impl SubscriberLink {
    pub fn new(topic: &str, config: TransportConfig) -> Result<Self, TransportError> {
        let dir = topic_dir(&config.root, topic)?;
        let mut link = SubscriberLink {
            topic: topic.to_owned(),
            dir,
            config,
            conns: Vec::new(),
            connected: HashSet::new(),
            next_scan: Instant::now(),
            framing_errors: 0,
        };
        link.rescan();
        Ok(link)
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    /// Connections closed because of an oversize or malformed frame.
    pub fn framing_errors(&self) -> u64 {
        self.framing_errors
    }

    /// File descriptors to multiplex on with an external `poll`/`select`.
    pub fn raw_fds(&self) -> Vec<RawFd> {
        self.conns.iter().map(|c| c.stream.as_raw_fd()).collect()
    }

    /// Connects to every socket in the topic directory not yet connected.
    /// Returns how many new connections were made.
    pub fn rescan(&mut self) -> usize {
        self.next_scan = Instant::now() + self.config.rescan_interval;
        let Ok(entries) = std::fs::read_dir(&self.dir) else { return 0 };
        let mut added = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_none_or(|e| e != "sock") || self.connected.contains(&path) {
                continue;
            }
            let Ok(stream) = UnixStream::connect(&path) else { continue };
            if stream.set_nonblocking(true).is_err() {
                continue;
            }
            let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            log::debug!("{}: connected to {}", self.topic, path.display());
            self.connected.insert(path.clone());
            self.conns.push(InConn { path, source, stream, buf: Vec::new() });
            added += 1;
        }
        added
    }

    /// Waits up to `timeout` for frames on any connection, rescanning the
    /// directory when due. Returns as soon as at least one frame is complete.
    pub fn poll_wait(&mut self, timeout: Duration) -> Vec<Received> {
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        loop {
            if Instant::now() >= self.next_scan {
                self.rescan();
            }
            let now = Instant::now();
            let wait = deadline.saturating_duration_since(now).min(self.next_scan.saturating_duration_since(now));
            let mut fds: Vec<_> = self
                .conns
                .iter()
                .map(|c| libc::pollfd { fd: c.stream.as_raw_fd(), events: libc::POLLIN, revents: 0 })
                .collect();
            let ready = unsafe { libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, duration_to_poll_ms(wait)) };
            if ready > 0 {
                let mut closed = Vec::new();
                for (i, pfd) in fds.iter().enumerate() {
                    if pfd.revents == 0 {
                        continue;
                    }
                    let c = &mut self.conns[i];
                    let read = c.read_available();
                    let parsed = c.take_frames(self.config.max_frame, &mut out);
                    match (read, parsed) {
                        (_, ReadState::Oversize) => {
                            self.framing_errors += 1;
                            closed.push(i);
                        }
                        (ReadState::Closed, _) => {
                            if !c.buf.is_empty() {
                                self.framing_errors += 1;
                            }
                            closed.push(i);
                        }
                        _ => {}
                    }
                }
                for i in closed.into_iter().rev() {
                    let c = self.conns.remove(i);
                    log::debug!("{}: connection to {} closed", self.topic, c.path.display());
                    self.connected.remove(&c.path);
                }
            }
            if !out.is_empty() || Instant::now() >= deadline {
                return out;
            }
        }
    }

    /// Closes the connection whose frame could not be decoded.
    pub fn reject_source(&mut self, source: &str) {
        if let Some(i) = self.conns.iter().position(|c| c.source == source) {
            let c = self.conns.remove(i);
            self.connected.remove(&c.path);
            self.framing_errors += 1;
        }
    }
}
