//! Point-to-point message delivery between roles.
//!
//! Two backends share one interface: ordered in-process queues and TCP
//! loopback sockets. Both record every frame they carry in a shared
//! [`TransportLog`], which the privacy audits read.

use crate::wire::{self, Message, WireError, FRAME_HEADER_LEN};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Endpoint {
    Vehicle(String),
    Sns,
    Ls(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Vehicle(id) => write!(f, "vehicle:{id}"),
            Endpoint::Sns => f.write_str("sns"),
            Endpoint::Ls(i) => write!(f, "ls:{i}"),
        }
    }
}

impl Endpoint {
    pub fn is_vehicle(&self) -> bool {
        matches!(self, Endpoint::Vehicle(_))
    }

    pub fn is_ls(&self) -> bool {
        matches!(self, Endpoint::Ls(_))
    }
}

/// Vehicles talk only to the social network server (road-side units are
/// collapsed into that link); the social network server talks to every
/// location server.
pub fn link_allowed(a: &Endpoint, b: &Endpoint) -> bool {
    matches!(
        (a, b),
        (Endpoint::Vehicle(_), Endpoint::Sns)
            | (Endpoint::Sns, Endpoint::Vehicle(_))
            | (Endpoint::Sns, Endpoint::Ls(_))
            | (Endpoint::Ls(_), Endpoint::Sns)
    )
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("peer closed the link")]
    PeerClosed,
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("no link between {0} and {1}")]
    NoLink(Endpoint, Endpoint),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Direction {
    VehicleToSns,
    SnsToVehicle,
    SnsToLs,
    LsToSns,
}

impl Direction {
    pub fn of(from: &Endpoint, to: &Endpoint) -> Option<Self> {
        match (from, to) {
            (Endpoint::Vehicle(_), Endpoint::Sns) => Some(Direction::VehicleToSns),
            (Endpoint::Sns, Endpoint::Vehicle(_)) => Some(Direction::SnsToVehicle),
            (Endpoint::Sns, Endpoint::Ls(_)) => Some(Direction::SnsToLs),
            (Endpoint::Ls(_), Endpoint::Sns) => Some(Direction::LsToSns),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogEntry {
    pub seq: u64,
    pub direction: Direction,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub raw: Vec<u8>,
    pub message: Message,
    /// Microseconds since the Unix epoch at send time.
    pub sent_at_us: u128,
}

/// Append-only record of every frame sent through a transport. Cloning
/// shares the underlying log.
#[derive(Debug, Clone, Default)]
pub struct TransportLog(Arc<Mutex<Vec<LogEntry>>>);

impl TransportLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, from: &Endpoint, to: &Endpoint, raw: &[u8], message: &Message) {
        let mut entries = self.0.lock().expect("log poisoned");
        let seq = entries.len() as u64;
        entries.push(LogEntry {
            seq,
            direction: Direction::of(from, to).expect("checked by link_allowed"),
            sender: from.clone(),
            receiver: to.clone(),
            raw: raw.to_vec(),
            message: message.clone(),
            sent_at_us: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_micros())
                .unwrap_or(0),
        });
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.0.lock().expect("log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.0.lock().expect("log poisoned").clear();
    }
}

pub trait Transport {
    /// Encodes `msg`, records it in the log and queues it for `to`.
    fn send(&mut self, from: &Endpoint, to: &Endpoint, msg: &Message) -> Result<(), TransportError>;

    /// Next message on the `from -> at` link, waiting up to the configured
    /// timeout.
    fn recv(&mut self, at: &Endpoint, from: &Endpoint) -> Result<Message, TransportError>;

    /// Closes the link between `a` and `b` in both directions. Frames
    /// already queued can still be received.
    fn close(&mut self, a: &Endpoint, b: &Endpoint);

    fn log(&self) -> &TransportLog;
}

type Link = (Endpoint, Endpoint);

fn check_link(from: &Endpoint, to: &Endpoint) -> Result<(), TransportError> {
    if link_allowed(from, to) {
        Ok(())
    } else {
        Err(TransportError::NoLink(from.clone(), to.clone()))
    }
}

fn wait(rx: &Receiver<Vec<u8>>, timeout: Duration) -> Result<Message, TransportError> {
    match rx.recv_timeout(timeout) {
        Ok(raw) => Ok(wire::decode(&raw)?),
        Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
        Err(RecvTimeoutError::Disconnected) => Err(TransportError::PeerClosed),
    }
}

/// Sending half (dropped on close) and receiving half of one link's queue.
type Queue = (Option<Sender<Vec<u8>>>, Receiver<Vec<u8>>);

/// FIFO queue per directed link, all within one process.
pub struct InProcessTransport {
    queues: BTreeMap<Link, Queue>,
    log: TransportLog,
    timeout: Duration,
}

impl InProcessTransport {
    pub fn new(log: TransportLog) -> Self {
        Self { queues: BTreeMap::new(), log, timeout: DEFAULT_TIMEOUT }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn queue(&mut self, from: &Endpoint, to: &Endpoint) -> &mut (Option<Sender<Vec<u8>>>, Receiver<Vec<u8>>) {
        self.queues.entry((from.clone(), to.clone())).or_insert_with(|| {
            let (tx, rx) = mpsc::channel();
            (Some(tx), rx)
        })
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, from: &Endpoint, to: &Endpoint, msg: &Message) -> Result<(), TransportError> {
        check_link(from, to)?;
        let raw = wire::encode(msg);
        let tx = self.queue(from, to).0.as_ref().ok_or(TransportError::PeerClosed)?;
        tx.send(raw.clone()).map_err(|_| TransportError::PeerClosed)?;
        self.log.record(from, to, &raw, msg);
        Ok(())
    }

    fn recv(&mut self, at: &Endpoint, from: &Endpoint) -> Result<Message, TransportError> {
        check_link(from, at)?;
        let timeout = self.timeout;
        let rx = &self.queue(from, at).1;
        wait(rx, timeout)
    }

    fn close(&mut self, a: &Endpoint, b: &Endpoint) {
        self.queue(a, b).0 = None;
        self.queue(b, a).0 = None;
    }

    fn log(&self) -> &TransportLog {
        &self.log
    }
}

/// Listen address for each role; unlisted roles bind `127.0.0.1:0`.
#[derive(Debug, Clone, Default)]
pub struct TcpConfig {
    pub listen: BTreeMap<Endpoint, SocketAddr>,
}

struct TcpPeer {
    writer: TcpStream,
}

/// One TCP connection per undirected link. The endpoint that sends first
/// connects to the other side's listener and announces itself with a short
/// handshake; a reader thread on each side feeds received frames into a
/// per-direction channel.
pub struct TcpTransport {
    config: TcpConfig,
    listeners: BTreeMap<Endpoint, TcpListener>,
    /// Writer for the `from -> to` direction, keyed `(from, to)`.
    writers: BTreeMap<Link, TcpPeer>,
    inboxes: BTreeMap<Link, Receiver<Vec<u8>>>,
    closed: BTreeSet<Link>,
    log: TransportLog,
    timeout: Duration,
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut frame = vec![0u8; FRAME_HEADER_LEN];
    stream.read_exact(&mut frame)?;
    let len = u32::from_be_bytes([frame[6], frame[7], frame[8], frame[9]]) as usize;
    let start = frame.len();
    frame.resize(start + len, 0);
    stream.read_exact(&mut frame[start..])?;
    Ok(frame)
}

fn spawn_reader(mut stream: TcpStream, tx: Sender<Vec<u8>>) {
    std::thread::spawn(move || {
        while let Ok(frame) = read_frame(&mut stream) {
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
}

impl TcpTransport {
    pub fn new(config: TcpConfig, log: TransportLog) -> Self {
        Self {
            config,
            listeners: BTreeMap::new(),
            writers: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            closed: BTreeSet::new(),
            log,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Bound address of an endpoint's listener, binding it if needed.
    pub fn local_addr(&mut self, ep: &Endpoint) -> Result<SocketAddr, TransportError> {
        Ok(self.listener(ep)?.local_addr()?)
    }

    fn listener(&mut self, ep: &Endpoint) -> Result<&TcpListener, TransportError> {
        if !self.listeners.contains_key(ep) {
            let addr = self
                .config
                .listen
                .get(ep)
                .copied()
                .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 0)));
            self.listeners.insert(ep.clone(), TcpListener::bind(addr)?);
        }
        Ok(&self.listeners[ep])
    }

    fn connect(&mut self, a: &Endpoint, b: &Endpoint) -> Result<(), TransportError> {
        let addr = self.local_addr(b)?;
        let mut out = TcpStream::connect(addr)?;
        out.set_nodelay(true)?;
        let label = a.to_string();
        let mut hello = Vec::with_capacity(label.len() + 4);
        crate::arith::put_bytes(&mut hello, label.as_bytes());
        out.write_all(&hello)?;

        let (mut inbound, _) = self.listeners[b].accept()?;
        inbound.set_nodelay(true)?;
        let mut len = [0u8; 4];
        inbound.read_exact(&mut len)?;
        let mut got = vec![0u8; u32::from_be_bytes(len) as usize];
        inbound.read_exact(&mut got)?;
        if got != label.as_bytes() {
            return Err(TransportError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "unexpected peer on link handshake",
            )));
        }

        let (tx_ab, rx_ab) = mpsc::channel();
        let (tx_ba, rx_ba) = mpsc::channel();
        spawn_reader(inbound.try_clone()?, tx_ab);
        spawn_reader(out.try_clone()?, tx_ba);
        self.inboxes.insert((a.clone(), b.clone()), rx_ab);
        self.inboxes.insert((b.clone(), a.clone()), rx_ba);
        self.writers.insert((a.clone(), b.clone()), TcpPeer { writer: out });
        self.writers.insert((b.clone(), a.clone()), TcpPeer { writer: inbound });
        Ok(())
    }

    fn ensure_link(&mut self, a: &Endpoint, b: &Endpoint) -> Result<(), TransportError> {
        if self.closed.contains(&(a.clone(), b.clone())) {
            return Ok(());
        }
        if !self.writers.contains_key(&(a.clone(), b.clone())) {
            self.connect(a, b)?;
        }
        Ok(())
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, from: &Endpoint, to: &Endpoint, msg: &Message) -> Result<(), TransportError> {
        check_link(from, to)?;
        self.ensure_link(from, to)?;
        let peer = self
            .writers
            .get_mut(&(from.clone(), to.clone()))
            .ok_or(TransportError::PeerClosed)?;
        let raw = wire::encode(msg);
        peer.writer.write_all(&raw).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => {
                TransportError::PeerClosed
            }
            _ => TransportError::Io(e),
        })?;
        self.log.record(from, to, &raw, msg);
        Ok(())
    }

    fn recv(&mut self, at: &Endpoint, from: &Endpoint) -> Result<Message, TransportError> {
        check_link(from, at)?;
        self.ensure_link(from, at)?;
        let rx = self
            .inboxes
            .get(&(from.clone(), at.clone()))
            .ok_or(TransportError::PeerClosed)?;
        wait(rx, self.timeout)
    }

    fn close(&mut self, a: &Endpoint, b: &Endpoint) {
        for key in [(a.clone(), b.clone()), (b.clone(), a.clone())] {
            if let Some(peer) = self.writers.remove(&key) {
                let _ = peer.writer.shutdown(Shutdown::Both);
            }
            self.closed.insert(key);
        }
    }

    fn log(&self) -> &TransportLog {
        &self.log
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for peer in self.writers.values() {
            let _ = peer.writer.shutdown(Shutdown::Both);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(t: &mut dyn Transport) -> Vec<Message> {
        let v = Endpoint::Vehicle("alice".into());
        let ls = Endpoint::Ls(0);
        t.send(&v, &Endpoint::Sns, &Message::Ack { reference: 1 }).unwrap();
        t.send(&v, &Endpoint::Sns, &Message::Ack { reference: 2 }).unwrap();
        t.send(&Endpoint::Sns, &ls, &Message::Ack { reference: 3 }).unwrap();
        t.send(&ls, &Endpoint::Sns, &Message::Ack { reference: 4 }).unwrap();
        vec![
            t.recv(&Endpoint::Sns, &v).unwrap(),
            t.recv(&Endpoint::Sns, &v).unwrap(),
            t.recv(&ls, &Endpoint::Sns).unwrap(),
            t.recv(&Endpoint::Sns, &ls).unwrap(),
        ]
    }

    fn expected() -> Vec<Message> {
        (1..=4).map(|reference| Message::Ack { reference }).collect()
    }

    #[test]
    fn in_process_preserves_order() {
        let mut t = InProcessTransport::new(TransportLog::new());
        assert_eq!(exchange(&mut t), expected());
        assert_eq!(t.log().len(), 4);
    }

    #[test]
    fn tcp_preserves_order() {
        let mut t = TcpTransport::new(TcpConfig::default(), TransportLog::new());
        assert_eq!(exchange(&mut t), expected());
        assert_eq!(t.log().len(), 4);
    }

    #[test]
    fn backends_log_identical_bytes() {
        let mut a = InProcessTransport::new(TransportLog::new());
        let mut b = TcpTransport::new(TcpConfig::default(), TransportLog::new());
        exchange(&mut a);
        exchange(&mut b);
        let strip = |t: &dyn Transport| {
            t.log()
                .entries()
                .into_iter()
                .map(|e| (e.sender, e.receiver, e.raw))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn vehicle_cannot_reach_location_server() {
        let mut t = InProcessTransport::new(TransportLog::new());
        let err = t
            .send(&Endpoint::Vehicle("v".into()), &Endpoint::Ls(0), &Message::Ack { reference: 0 })
            .unwrap_err();
        assert!(matches!(err, TransportError::NoLink(..)));
    }

    #[test]
    fn empty_queue_times_out() {
        let mut t = InProcessTransport::new(TransportLog::new()).with_timeout(Duration::from_millis(20));
        let err = t.recv(&Endpoint::Sns, &Endpoint::Ls(1)).unwrap_err();
        assert!(matches!(err, TransportError::Timeout));
    }

    #[test]
    fn closed_link_reports_peer_closed() {
        let sns = Endpoint::Sns;
        let ls = Endpoint::Ls(0);
        let mut t = InProcessTransport::new(TransportLog::new());
        t.send(&sns, &ls, &Message::Ack { reference: 9 }).unwrap();
        t.close(&sns, &ls);
        assert_eq!(t.recv(&ls, &sns).unwrap(), Message::Ack { reference: 9 });
        assert!(matches!(t.recv(&ls, &sns), Err(TransportError::PeerClosed)));
        assert!(matches!(
            t.send(&sns, &ls, &Message::Ack { reference: 10 }),
            Err(TransportError::PeerClosed)
        ));
    }

    #[test]
    fn tcp_closed_link_reports_peer_closed() {
        let sns = Endpoint::Sns;
        let ls = Endpoint::Ls(0);
        let mut t = TcpTransport::new(TcpConfig::default(), TransportLog::new())
            .with_timeout(Duration::from_secs(5));
        t.send(&sns, &ls, &Message::Ack { reference: 9 }).unwrap();
        assert_eq!(t.recv(&ls, &sns).unwrap(), Message::Ack { reference: 9 });
        t.close(&sns, &ls);
        assert!(matches!(t.recv(&ls, &sns), Err(TransportError::PeerClosed)));
        assert!(matches!(
            t.send(&sns, &ls, &Message::Ack { reference: 10 }),
            Err(TransportError::PeerClosed)
        ));
    }
}
