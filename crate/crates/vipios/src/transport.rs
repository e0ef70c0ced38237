//! Message transports.
//!
//! Every participant owns an [`Endpoint`] addressed by a node id: servers
//! use their configured id, clients the id assigned on connect. Frames are
//! encoded with the wire codec on send and decoded on receipt, over either
//! an in-process hub ([`LoopbackNet`]) or TCP ([`TcpNet`]).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use vipios_core::protocol::{frame_len, CodecError, Message, MsgClass, MsgType, HEADER_LEN};

pub type NodeId = u32;

/// Node ids at or above this value belong to clients.
pub const CLIENT_BASE: NodeId = 0x0001_0000;
/// Ids at or above this value are provisional ids used while connecting.
pub const PROVISIONAL_BASE: NodeId = 0x8000_0000;

pub fn is_server(id: NodeId) -> bool {
    id < CLIENT_BASE
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("no route to node {0}")]
    Unreachable(NodeId),
    #[error("node id {0} is already in use")]
    AddressInUse(NodeId),
    #[error("endpoint closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Message counters shared by all endpoints of one network object.
/// Messages are counted when received.
#[derive(Debug, Default)]
pub struct Stats {
    counts: Mutex<BTreeMap<(MsgType, MsgClass), u64>>,
    relay: AtomicU64,
    broadcasts: AtomicU64,
    data_bytes: AtomicU64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub counts: BTreeMap<(MsgType, MsgClass), u64>,
    /// Acknowledgements or data of READ/WRITE passed between servers.
    pub relay: u64,
    /// Broadcast sub-requests issued, each counted once.
    pub broadcasts: u64,
    /// Payload bytes carried by DATA messages.
    pub data_bytes: u64,
}

impl Stats {
    pub fn record(&self, m: &Message) {
        *self
            .counts
            .lock()
            .unwrap()
            .entry((m.msg_type, m.class))
            .or_default() += 1;
        let transfer_reply = m.class == MsgClass::Ack || m.msg_type == MsgType::Data;
        if is_server(m.sender) && is_server(m.recipient) && transfer_reply {
            let relayed = matches!(m.msg_type, MsgType::Read | MsgType::Write | MsgType::Data);
            if relayed {
                self.relay.fetch_add(1, Ordering::Relaxed);
            }
        }
        if m.msg_type == MsgType::Data {
            self.data_bytes
                .fetch_add(m.data.len() as u64, Ordering::Relaxed);
        }
    }

    pub fn record_broadcast(&self) {
        self.broadcasts.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            counts: self.counts.lock().unwrap().clone(),
            relay: self.relay.load(Ordering::Relaxed),
            broadcasts: self.broadcasts.load(Ordering::Relaxed),
            data_bytes: self.data_bytes.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.counts.lock().unwrap().clear();
        self.relay.store(0, Ordering::Relaxed);
        self.broadcasts.store(0, Ordering::Relaxed);
        self.data_bytes.store(0, Ordering::Relaxed);
    }
}

impl StatsSnapshot {
    pub fn count(&self, t: MsgType, c: MsgClass) -> u64 {
        self.counts.get(&(t, c)).copied().unwrap_or(0)
    }

    /// Difference `self - earlier`.
    pub fn since(&self, earlier: &StatsSnapshot) -> StatsSnapshot {
        let mut counts = self.counts.clone();
        for (k, v) in counts.iter_mut() {
            *v -= earlier.counts.get(k).copied().unwrap_or(0);
        }
        counts.retain(|_, v| *v > 0);
        StatsSnapshot {
            counts,
            relay: self.relay - earlier.relay,
            broadcasts: self.broadcasts - earlier.broadcasts,
            data_bytes: self.data_bytes - earlier.data_bytes,
        }
    }

    /// Read acknowledgements and data messages sent to clients.
    pub fn read_acks(&self) -> u64 {
        self.count(MsgType::Read, MsgClass::Ack)
    }

    pub fn read_datas(&self) -> u64 {
        self.count(MsgType::Data, MsgClass::Ack)
    }

    /// Directed internal sub-requests of a type.
    pub fn directed(&self, t: MsgType) -> u64 {
        self.count(t, MsgClass::Di)
    }
}

trait Router: Send + Sync {
    fn route(&self, from: NodeId, to: NodeId, frame: Vec<u8>) -> Result<(), NetError>;
    fn detach(&self, id: NodeId);
}

/// Sending half of an endpoint; cheap to clone into worker threads.
#[derive(Clone)]
pub struct Postman {
    id: NodeId,
    router: Arc<dyn Router>,
    stats: Arc<Stats>,
}

impl Postman {
    pub fn id(&self) -> NodeId {
        self.id
    }

    /// Sends `msg` to `msg.recipient`, stamping the sender id.
    pub fn send(&self, mut msg: Message) -> Result<(), NetError> {
        msg.sender = self.id;
        self.router.route(self.id, msg.recipient, msg.encode())
    }

    pub fn stats(&self) -> &Arc<Stats> {
        &self.stats
    }
}

pub struct Endpoint {
    postman: Postman,
    inbox: Receiver<Vec<u8>>,
}

impl Endpoint {
    pub fn id(&self) -> NodeId {
        self.postman.id
    }

    pub fn postman(&self) -> Postman {
        self.postman.clone()
    }

    pub fn send(&self, msg: Message) -> Result<(), NetError> {
        self.postman.send(msg)
    }

    pub fn recv(&self) -> Result<Message, NetError> {
        let frame = self.inbox.recv().map_err(|_| NetError::Closed)?;
        self.accept(frame)
    }

    pub fn recv_timeout(&self, t: Duration) -> Result<Message, NetError> {
        match self.inbox.recv_timeout(t) {
            Ok(frame) => self.accept(frame),
            Err(RecvTimeoutError::Timeout) => Err(NetError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(NetError::Closed),
        }
    }

    fn accept(&self, frame: Vec<u8>) -> Result<Message, NetError> {
        let m = Message::decode(&frame)?;
        self.postman.stats.record(&m);
        Ok(m)
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.postman.router.detach(self.postman.id);
    }
}

/// Something that can create endpoints.
pub trait Network: Send + Sync {
    fn endpoint(&self, id: NodeId) -> Result<Endpoint, NetError>;
    fn stats(&self) -> Arc<Stats>;
    /// A fresh provisional id for a connecting client.
    fn provisional_id(&self) -> NodeId;
}

/// In-process transport: one channel per endpoint.
pub struct LoopbackNet {
    hub: Arc<Hub>,
    stats: Arc<Stats>,
    next: AtomicU32,
}

#[derive(Default)]
struct Hub {
    routes: RwLock<HashMap<NodeId, Sender<Vec<u8>>>>,
}

impl Router for Hub {
    fn route(&self, _from: NodeId, to: NodeId, frame: Vec<u8>) -> Result<(), NetError> {
        let routes = self.routes.read().unwrap();
        let tx = routes.get(&to).ok_or(NetError::Unreachable(to))?;
        tx.send(frame).map_err(|_| NetError::Unreachable(to))
    }

    fn detach(&self, id: NodeId) {
        self.routes.write().unwrap().remove(&id);
    }
}

impl LoopbackNet {
    pub fn new() -> Arc<LoopbackNet> {
        Arc::new(LoopbackNet {
            hub: Arc::default(),
            stats: Arc::default(),
            next: AtomicU32::new(PROVISIONAL_BASE),
        })
    }
}

impl Network for LoopbackNet {
    fn endpoint(&self, id: NodeId) -> Result<Endpoint, NetError> {
        let (tx, rx) = unbounded();
        let mut routes = self.hub.routes.write().unwrap();
        if routes.contains_key(&id) {
            return Err(NetError::AddressInUse(id));
        }
        routes.insert(id, tx);
        Ok(Endpoint {
            postman: Postman {
                id,
                router: self.hub.clone(),
                stats: self.stats.clone(),
            },
            inbox: rx,
        })
    }

    fn stats(&self) -> Arc<Stats> {
        self.stats.clone()
    }

    fn provisional_id(&self) -> NodeId {
        self.next.fetch_add(1, Ordering::Relaxed)
    }
}

/// TCP transport. Servers listen on their configured address; every
/// connection starts with a hello frame naming the dialing node. Messages
/// between two nodes always use the first connection registered for the
/// pair, which keeps them ordered.
pub struct TcpNet {
    addrs: HashMap<NodeId, SocketAddr>,
    stats: Arc<Stats>,
}

/// ADMIN operation code of the connection hello frame.
pub const HELLO_OP: u8 = 0xEE;

struct TcpRouter {
    me: NodeId,
    addrs: HashMap<NodeId, SocketAddr>,
    peers: Mutex<HashMap<NodeId, Arc<Mutex<TcpStream>>>>,
    inbox: Sender<Vec<u8>>,
    stop: Arc<AtomicBool>,
}

impl TcpNet {
    pub fn new(addrs: HashMap<NodeId, SocketAddr>) -> Arc<TcpNet> {
        Arc::new(TcpNet {
            addrs,
            stats: Arc::default(),
        })
    }
}

fn read_frame(s: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0u8; HEADER_LEN];
    s.read_exact(&mut buf)?;
    let word =
        |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]) as usize;
    let rest = word(&buf, 36) + word(&buf, 40);
    buf.resize(HEADER_LEN + rest, 0);
    s.read_exact(&mut buf[HEADER_LEN..])?;
    frame_len(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(buf)
}

fn hello(me: NodeId) -> Vec<u8> {
    let mut m = Message::new(MsgType::Admin, MsgClass::Di);
    m.sender = me;
    m.params = vec![HELLO_OP];
    m.encode()
}

impl TcpRouter {
    fn register(&self, peer: NodeId, stream: &TcpStream) -> std::io::Result<Arc<Mutex<TcpStream>>> {
        let mut peers = self.peers.lock().unwrap();
        if let Some(s) = peers.get(&peer) {
            return Ok(s.clone());
        }
        let w = Arc::new(Mutex::new(stream.try_clone()?));
        peers.insert(peer, w.clone());
        Ok(w)
    }

    fn spawn_reader(self: &Arc<Self>, mut stream: TcpStream) {
        let inbox = self.inbox.clone();
        thread::spawn(move || {
            while let Ok(frame) = read_frame(&mut stream) {
                if inbox.send(frame).is_err() {
                    break;
                }
            }
        });
    }

    fn dial(self: &Arc<Self>, to: NodeId) -> Result<Arc<Mutex<TcpStream>>, NetError> {
        let addr = self.addrs.get(&to).ok_or(NetError::Unreachable(to))?;
        let mut s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        s.write_all(&hello(self.me))?;
        let w = self.register(to, &s)?;
        self.spawn_reader(s);
        Ok(w)
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        listener.set_nonblocking(true).ok();
        while !self.stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false).ok();
                    s.set_nodelay(true).ok();
                    let Ok(first) = read_frame(&mut s) else {
                        continue;
                    };
                    let Ok(m) = Message::decode(&first) else {
                        continue;
                    };
                    if m.msg_type != MsgType::Admin || m.params.first() != Some(&HELLO_OP) {
                        continue;
                    }
                    if self.register(m.sender, &s).is_ok() {
                        self.spawn_reader(s);
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    }
}

impl TcpRouter {
    fn peer(&self, id: NodeId) -> Option<Arc<Mutex<TcpStream>>> {
        self.peers.lock().unwrap().get(&id).cloned()
    }

    /// Waits for a node without a listen address to finish dialing in.
    fn await_peer(&self, id: NodeId) -> Result<Arc<Mutex<TcpStream>>, NetError> {
        let deadline = Instant::now() + PEER_WAIT;
        loop {
            if let Some(s) = self.peer(id) {
                return Ok(s);
            }
            if Instant::now() >= deadline || self.stop.load(Ordering::Relaxed) {
                return Err(NetError::Unreachable(id));
            }
            thread::sleep(Duration::from_millis(2));
        }
    }
}

/// How long a send waits for an unknown client's link to appear.
const PEER_WAIT: Duration = Duration::from_secs(2);

impl Router for Arc<TcpRouter> {
    fn route(&self, _from: NodeId, to: NodeId, frame: Vec<u8>) -> Result<(), NetError> {
        if to == self.me {
            return self.inbox.send(frame).map_err(|_| NetError::Closed);
        }
        let stream = match self.peer(to) {
            Some(s) => s,
            None if self.addrs.contains_key(&to) => self.dial(to)?,
            None => self.await_peer(to)?,
        };
        let mut s = stream.lock().unwrap();
        if let Err(e) = s.write_all(&frame) {
            drop(s);
            self.peers.lock().unwrap().remove(&to);
            return Err(e.into());
        }
        Ok(())
    }

    fn detach(&self, _id: NodeId) {
        self.stop.store(true, Ordering::Relaxed);
        for (_, s) in self.peers.lock().unwrap().drain() {
            let _ = s.lock().unwrap().shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Network for TcpNet {
    fn endpoint(&self, id: NodeId) -> Result<Endpoint, NetError> {
        let (tx, rx) = unbounded();
        let router = Arc::new(TcpRouter {
            me: id,
            addrs: self.addrs.clone(),
            peers: Mutex::default(),
            inbox: tx,
            stop: Arc::default(),
        });
        if is_server(id) {
            let addr = self.addrs.get(&id).ok_or(NetError::Unreachable(id))?;
            let listener = TcpListener::bind(addr)?;
            let r = router.clone();
            thread::spawn(move || r.accept_loop(listener));
        } else if id < PROVISIONAL_BASE {
            // Clients have no listen address, so every server that may
            // answer them needs a link opened from this side.
            for &to in self.addrs.keys() {
                if let Err(e) = router.dial(to) {
                    log::warn!("client {id}: cannot reach server {to}: {e}");
                }
            }
        }
        Ok(Endpoint {
            postman: Postman {
                id,
                router: Arc::new(router),
                stats: self.stats.clone(),
            },
            inbox: rx,
        })
    }

    fn stats(&self) -> Arc<Stats> {
        self.stats.clone()
    }

    fn provisional_id(&self) -> NodeId {
        use std::time::{SystemTime, UNIX_EPOCH};
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.subsec_nanos());
        PROVISIONAL_BASE | (nanos ^ std::process::id().rotate_left(16)) & 0x7FFF_FFFF
    }
}
