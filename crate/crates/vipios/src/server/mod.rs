//! The storage server.
//!
//! A dispatcher thread receives every message. Short administrative
//! messages (views, sizes, registrations, connects) are answered inline;
//! file requests run on worker threads. Acknowledgements and DATA messages
//! are handed to the worker waiting for them, keyed by client and request
//! id.
//!
//! The server receiving a client's READ or WRITE (its buddy) fragments it:
//! bytes stored locally are served directly, bytes on other servers go out
//! as directed sub-requests when the file's layout is known here, otherwise
//! as one broadcast. Every participant answers the client directly.

pub mod buffer;
pub mod disk;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, warn};
use vipios_core::distribution::build_process_view;
use vipios_core::layout::{fragment, Layout, LocalPortions, Segment, BEST_DISK};
use vipios_core::protocol::params::{IoRequest, Reader, SubRequest, TransferAck, Writer};
use vipios_core::protocol::{
    choose_transmission, Message, MsgClass, MsgType, Status, Transmission,
};
use vipios_core::viewdesc::{AccessDesc, View};
use vipios_core::BaseType;

use crate::amode;
use crate::config::ClusterConfig;
use crate::hints::{FileAdmin, Hint};
use crate::transport::{Endpoint, NetError, Network, NodeId, Postman, CLIENT_BASE};
use buffer::BufferManager;
use disk::Disk;

/// ADMIN operation codes.
pub mod admin_op {
    pub const REGISTER: u8 = 1;
    pub const UNREGISTER: u8 = 2;
    pub const LAYOUT: u8 = 3;
}

/// SET_SIZE modes.
pub mod size_mode {
    pub const SET: u8 = 0;
    pub const GROW: u8 = 1;
}

const DRAIN: u8 = 0;
const EXIT: u8 = 1;

const REPLY_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("server {0} is not in the configuration")]
    UnknownServer(NodeId),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("disk: {0}")]
    Io(#[from] std::io::Error),
}

struct FileEntry {
    id: u32,
    portions: LocalPortions,
    layout: Option<Layout>,
    size: Mutex<u64>,
    rw: RwLock<()>,
}

impl FileEntry {
    fn size(&self) -> u64 {
        *self.size.lock().unwrap()
    }
}

struct CtlFile {
    id: u32,
    layout: Layout,
}

struct CtlState {
    files: HashMap<String, CtlFile>,
    next_file: u32,
}

struct ConnState {
    next_client: u32,
    rr: usize,
    clients: HashMap<u32, NodeId>,
}

struct Shared {
    id: NodeId,
    cfg: Arc<ClusterConfig>,
    post: Postman,
    disks: Vec<Disk>,
    best_disk: Mutex<u32>,
    buffer: BufferManager,
    files: RwLock<HashMap<u32, Arc<FileEntry>>>,
    views: Mutex<HashMap<(u32, u32), Arc<View>>>,
    waiters: Mutex<HashMap<(u32, u32), Sender<Message>>>,
    next_request: AtomicU32,
    ctl: Mutex<CtlState>,
    conn: Mutex<ConnState>,
    inflight: Mutex<u32>,
    idle: Condvar,
    draining: AtomicBool,
    exit: AtomicBool,
}

pub struct ServerHandle {
    pub id: NodeId,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Waits for the server to exit after a shutdown.
    pub fn join(mut self) {
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }

    pub fn is_finished(&self) -> bool {
        self.join.as_ref().is_none_or(|j| j.is_finished())
    }
}

/// Starts server `id` of `cfg` on `net`.
pub fn spawn(
    cfg: Arc<ClusterConfig>,
    id: NodeId,
    net: &dyn Network,
) -> Result<ServerHandle, ServerError> {
    let sc = cfg
        .server(id)
        .ok_or(ServerError::UnknownServer(id))?
        .clone();
    let disks = sc
        .disks
        .iter()
        .map(|d| Disk::new(d.path.clone(), d.latency_ms_per_mib))
        .collect::<Result<Vec<_>, _>>()?;
    let ep = net.endpoint(id)?;
    let shared = Arc::new(Shared {
        id,
        post: ep.postman(),
        disks,
        best_disk: Mutex::new(0),
        buffer: BufferManager::new(sc.buffer),
        files: RwLock::default(),
        views: Mutex::default(),
        waiters: Mutex::default(),
        next_request: AtomicU32::new(1),
        ctl: Mutex::new(CtlState {
            files: HashMap::new(),
            next_file: 1,
        }),
        conn: Mutex::new(ConnState {
            next_client: CLIENT_BASE,
            rr: 0,
            clients: HashMap::new(),
        }),
        inflight: Mutex::new(0),
        idle: Condvar::new(),
        draining: AtomicBool::new(false),
        exit: AtomicBool::new(false),
        cfg,
    });
    let join = thread::Builder::new()
        .name(format!("vipios-server-{id}"))
        .spawn(move || dispatch(shared, ep))?;
    Ok(ServerHandle {
        id,
        join: Some(join),
    })
}

fn dispatch(sh: Arc<Shared>, ep: Endpoint) {
    use MsgClass::{Di, Er};
    use MsgType::*;
    while !sh.exit.load(Ordering::Relaxed) {
        let m = match ep.recv_timeout(Duration::from_millis(20)) {
            Ok(m) => m,
            Err(NetError::Timeout) => continue,
            Err(NetError::Codec(e)) => {
                warn!("server {}: dropping undecodable frame: {e}", sh.id);
                continue;
            }
            Err(_) => break,
        };
        let op = m.params.first().copied();
        match (m.class, m.msg_type) {
            (MsgClass::Ack, _) | (_, Data) => sh.deliver(m),
            (Er, SetView) => sh.reply(&m, set_view(&sh, &m)),
            (Er, Close) => sh.reply(&m, close_views(&sh, &m)),
            (Er, GetSize) => sh.reply(&m, get_size(&sh, &m)),
            (Er, Seek) => sh.reply(&m, Ok(Vec::new())),
            (Di, SetSize) => sh.reply(&m, apply_size_message(&sh, &m)),
            (Di, Admin) if op == Some(admin_op::REGISTER) || op == Some(admin_op::UNREGISTER) => {
                sh.reply(&m, register(&sh, &m))
            }
            (Er, Connect) => connect(&sh, &m),
            (Er, Disconnect) => sh.reply(&m, disconnect(&sh, &m)),
            (Di, Shutdown) => internal_shutdown(&sh, &m),
            (Er, _) if sh.draining.load(Ordering::Relaxed) => {
                sh.reply(&m, Err(Status::ShuttingDown))
            }
            _ => {
                *sh.inflight.lock().unwrap() += 1;
                let w = sh.clone();
                thread::spawn(move || {
                    work(&w, m);
                    let mut n = w.inflight.lock().unwrap();
                    *n -= 1;
                    w.idle.notify_all();
                });
            }
        }
    }
    debug!("server {} exiting", sh.id);
}

fn work(sh: &Arc<Shared>, m: Message) {
    use MsgClass::{Bi, Di, Er};
    use MsgType::*;
    match (m.class, m.msg_type) {
        (Er, Read) => buddy_read(sh, &m),
        (Er, Write) => buddy_write(sh, &m),
        (Di | Bi, Read) => participant_read(sh, &m),
        (Di | Bi, Write) => participant_write(sh, &m),
        (Er, SetSize) => sh.reply(&m, set_size(sh, &m)),
        (Er | Di, Open) => {
            if !sh.forward_to_controller(&m) {
                match open(sh, &m) {
                    Ok((id, size)) => {
                        let mut a = m.ack(sh.id);
                        a.file = id;
                        a.params = Writer::new().u64(size).finish();
                        sh.send(a);
                    }
                    Err(s) => sh.reply(&m, Err(s)),
                }
            }
        }
        (Er | Di, Remove) => {
            if !sh.forward_to_controller(&m) {
                sh.reply(&m, remove(sh, &m));
            }
        }
        (Er | Di, Admin) => {
            if !sh.forward_to_controller(&m) {
                layout_query(sh, &m);
            }
        }
        (Er | Di, Hint) => match hint(sh, &m) {
            Ok(None) => {}
            r => sh.reply(&m, r.map(Option::unwrap_or_default)),
        },
        (Er, Shutdown) => {
            if sh.id != sh.cfg.controller() {
                let mut f = m.clone();
                f.recipient = sh.cfg.controller();
                sh.send(f);
            } else {
                shutdown_cluster(sh, &m);
            }
        }
        _ => sh.reply(&m, Err(Status::BadRequest)),
    }
}

impl Shared {
    fn send(&self, m: Message) {
        let to = m.recipient;
        if let Err(e) = self.post.send(m) {
            debug!("server {}: send to {to} failed: {e}", self.id);
        }
    }

    /// Acknowledges `m` with `params`, or with an error status.
    fn reply(&self, m: &Message, r: Result<Vec<u8>, Status>) {
        let mut a = m.ack(self.id);
        match r {
            Ok(p) => a.params = p,
            Err(s) => a.status = s.code(),
        }
        self.send(a);
    }

    fn deliver(&self, m: Message) {
        let key = (m.client, m.request);
        match self.waiters.lock().unwrap().get(&key) {
            Some(tx) => {
                let _ = tx.send(m);
            }
            None => debug!(
                "server {}: unexpected {:?} {:?} for {key:?}",
                self.id, m.msg_type, m.class
            ),
        }
    }

    fn wait_for(&self, client: u32, request: u32) -> Waiter<'_> {
        let (tx, rx) = unbounded();
        self.waiters.lock().unwrap().insert((client, request), tx);
        Waiter {
            sh: self,
            key: (client, request),
            rx,
        }
    }

    fn file(&self, id: u32) -> Result<Arc<FileEntry>, Status> {
        self.files
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(Status::UnknownFile)
    }

    fn others(&self) -> Vec<NodeId> {
        self.cfg
            .server_ids()
            .into_iter()
            .filter(|&s| s != self.id)
            .collect()
    }

    /// Sends `msgs` as one internal request and collects one reply each.
    fn call(&self, mut msgs: Vec<Message>) -> Result<Vec<Message>, Status> {
        if msgs.is_empty() {
            return Ok(Vec::new());
        }
        let req = self.next_request.fetch_add(1, Ordering::Relaxed);
        let w = self.wait_for(self.id, req);
        let n = msgs.len();
        for m in msgs.iter_mut() {
            m.client = self.id;
            m.request = req;
        }
        for m in msgs {
            self.post.send(m).map_err(|_| Status::IoFailure)?;
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(w.next()?);
        }
        if let Some(bad) = out.iter().find(|m| m.status < 0) {
            return Err(Status::from_code(bad.status).unwrap_or(Status::IoFailure));
        }
        Ok(out)
    }

    /// Forwards a controller request to the storage controller. Returns
    /// false when this server is the controller.
    fn forward_to_controller(&self, m: &Message) -> bool {
        let sc = self.cfg.controller();
        if sc == self.id {
            return false;
        }
        let mut f = m.clone();
        f.class = MsgClass::Di;
        f.recipient = sc;
        self.send(f);
        true
    }

    fn disk(&self, id: u32) -> Result<&Disk, Status> {
        self.disks.get(id as usize).ok_or(Status::IoFailure)
    }
}

struct Waiter<'a> {
    sh: &'a Shared,
    key: (u32, u32),
    rx: Receiver<Message>,
}

impl Waiter<'_> {
    fn next(&self) -> Result<Message, Status> {
        self.rx
            .recv_timeout(REPLY_TIMEOUT)
            .map_err(|_| Status::IoFailure)
    }
}

impl Drop for Waiter<'_> {
    fn drop(&mut self) {
        self.sh.waiters.lock().unwrap().remove(&self.key);
    }
}

// ---------------------------------------------------------------------------
// Inline administrative requests

fn set_view(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let mut r = Reader::new(&m.params);
    let bad = |_| Status::BadRequest;
    let view_id = r.u32().map_err(bad)?;
    let disp = r.u64().map_err(bad)?;
    let etype = BaseType::from_code(r.u32().map_err(bad)?).ok_or(Status::BadRequest)?;
    let (desc, _) = AccessDesc::decode(r.bytes().map_err(bad)?).map_err(|_| Status::BadRequest)?;
    if view_id == 0 || desc.total_actual() == 0 {
        return Err(Status::BadRequest);
    }
    let view = View::from_desc(disp, etype, desc);
    sh.views
        .lock()
        .unwrap()
        .insert((m.client, view_id), Arc::new(view));
    Ok(Vec::new())
}

fn close_views(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let mut r = Reader::new(&m.params);
    let n = r.u32().map_err(|_| Status::BadRequest)?;
    let mut views = sh.views.lock().unwrap();
    for _ in 0..n {
        let id = r.u32().map_err(|_| Status::BadRequest)?;
        views.remove(&(m.client, id));
    }
    Ok(Vec::new())
}

fn get_size(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    Ok(Writer::new().u64(sh.file(m.file)?.size()).finish())
}

fn view_of(sh: &Shared, client: u32, view_id: u32) -> Result<Arc<View>, Status> {
    if view_id == 0 {
        return Ok(Arc::new(View::bytes(0)));
    }
    sh.views
        .lock()
        .unwrap()
        .get(&(client, view_id))
        .cloned()
        .ok_or(Status::BadRequest)
}

fn connect(sh: &Shared, m: &Message) {
    let mut a = m.ack(sh.id);
    a.recipient = m.sender;
    if sh.id != sh.cfg.connection_controller() {
        a.status = Status::NotController.code();
    } else {
        let ids = sh.cfg.server_ids();
        let mut c = sh.conn.lock().unwrap();
        let client = c.next_client;
        c.next_client += 1;
        let buddy = ids[c.rr % ids.len()];
        c.rr += 1;
        c.clients.insert(client, buddy);
        a.client = client;
        a.params = Writer::new()
            .u32(buddy)
            .u32(sh.cfg.controller())
            .u32(ids.len() as u32)
            .finish();
    }
    sh.send(a);
}

fn disconnect(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    if sh.id != sh.cfg.connection_controller() {
        return Err(Status::NotController);
    }
    match sh.conn.lock().unwrap().clients.remove(&m.client) {
        Some(_) => Ok(Vec::new()),
        None => Err(Status::BadRequest),
    }
}

fn register(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let mut r = Reader::new(&m.params);
    let bad = |_| Status::BadRequest;
    match r.u8().map_err(bad)? {
        admin_op::REGISTER => {
            let size = r.u64().map_err(bad)?;
            let blob = r.bytes().map_err(bad)?;
            let mut portions =
                LocalPortions::decode(blob, &mut 0).map_err(|_| Status::BadRequest)?;
            portions.resolve_disk(*sh.best_disk.lock().unwrap());
            let layout = match r.u8().map_err(bad)? {
                0 => None,
                _ => Some(
                    Layout::decode(r.bytes().map_err(bad)?, &mut 0)
                        .map_err(|_| Status::BadRequest)?,
                ),
            };
            // a fresh file id never has valid data on disk
            for d in portions.disks() {
                sh.disk(d)?.remove(m.file).map_err(|_| Status::IoFailure)?;
            }
            let entry = FileEntry {
                id: m.file,
                portions,
                layout,
                size: Mutex::new(size),
                rw: RwLock::new(()),
            };
            sh.files.write().unwrap().insert(m.file, Arc::new(entry));
            Ok(Vec::new())
        }
        admin_op::UNREGISTER => {
            let entry = sh.files.write().unwrap().remove(&m.file);
            if let Some(e) = entry {
                for d in e.portions.disks() {
                    sh.disk(d)?.remove(e.id).map_err(|_| Status::IoFailure)?;
                }
            }
            Ok(Vec::new())
        }
        _ => Err(Status::BadRequest),
    }
}

/// Applies a size change to this server's portions of a file.
fn apply_size(sh: &Shared, entry: &FileEntry, size: u64, mode: u8) -> Result<(), Status> {
    let mut cur = entry.size.lock().unwrap();
    match mode {
        size_mode::GROW => *cur = (*cur).max(size),
        size_mode::SET => {
            if size < *cur {
                cut_portions(sh, entry, size, *cur).map_err(|_| Status::IoFailure)?;
            }
            *cur = size;
        }
        _ => return Err(Status::BadRequest),
    }
    Ok(())
}

/// Drops stored bytes at or past `size`. A disk file is truncated when no
/// byte below `size` lives past the cut; otherwise the dropped pieces are
/// overwritten with zeros.
fn cut_portions(sh: &Shared, entry: &FileEntry, size: u64, old: u64) -> std::io::Result<()> {
    let p = &entry.portions;
    let (kept, _) = p.split(0, size);
    let (dropped, _) = p.split(size, old - size);
    for d in p.disks() {
        let Ok(disk) = sh.disk(d) else { continue };
        let Some(cut) = p.physical_cut(d, size) else {
            continue;
        };
        let safe = kept
            .iter()
            .filter(|k| k.disk == d)
            .all(|k| k.physical + k.len <= cut);
        if safe {
            disk.truncate(entry.id, cut)?;
        } else {
            for piece in dropped.iter().filter(|k| k.disk == d) {
                disk.write(entry.id, piece.physical, &vec![0; piece.len as usize])?;
            }
        }
    }
    Ok(())
}

fn apply_size_message(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let mut r = Reader::new(&m.params);
    let size = r.u64().map_err(|_| Status::BadRequest)?;
    let mode = r.u8().map_err(|_| Status::BadRequest)?;
    apply_size(sh, &*sh.file(m.file)?, size, mode)?;
    Ok(Vec::new())
}

fn size_message(file: u32, to: NodeId, size: u64, mode: u8) -> Message {
    let mut m = Message::new(MsgType::SetSize, MsgClass::Di);
    m.recipient = to;
    m.file = file;
    m.params = Writer::new().u64(size).u8(mode).finish();
    m
}

/// Sets the size here, then on every other server.
fn propagate_size(sh: &Shared, entry: &FileEntry, size: u64, mode: u8) -> Result<(), Status> {
    apply_size(sh, entry, size, mode)?;
    let msgs = sh
        .others()
        .into_iter()
        .map(|s| size_message(entry.id, s, size, mode))
        .collect();
    sh.call(msgs).map(|_| ())
}

fn set_size(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let mut r = Reader::new(&m.params);
    let size = r.u64().map_err(|_| Status::BadRequest)?;
    let mode = r.u8().map_err(|_| Status::BadRequest)?;
    let entry = sh.file(m.file)?;
    let _g = entry.rw.write().unwrap();
    let target = if mode == size_mode::GROW {
        entry.size().max(size)
    } else {
        size
    };
    if mode != size_mode::GROW && mode != size_mode::SET {
        return Err(Status::BadRequest);
    }
    propagate_size(sh, &entry, target, mode)?;
    Ok(Writer::new().u64(entry.size()).finish())
}

fn internal_shutdown(sh: &Arc<Shared>, m: &Message) {
    match m.params.first().copied() {
        Some(DRAIN) => {
            sh.draining.store(true, Ordering::Relaxed);
            let (w, m) = (sh.clone(), m.clone());
            thread::spawn(move || {
                wait_idle(&w, 0);
                w.reply(&m, Ok(Vec::new()));
            });
        }
        Some(EXIT) => {
            sh.reply(m, Ok(Vec::new()));
            sh.exit.store(true, Ordering::Relaxed);
        }
        _ => sh.reply(m, Err(Status::BadRequest)),
    }
}

fn wait_idle(sh: &Shared, allowed: u32) {
    let mut n = sh.inflight.lock().unwrap();
    while *n > allowed {
        n = sh.idle.wait(n).unwrap();
    }
}

fn shutdown_cluster(sh: &Shared, m: &Message) {
    sh.draining.store(true, Ordering::Relaxed);
    let phase = |p: u8| {
        sh.others()
            .into_iter()
            .map(|s| {
                let mut x = Message::new(MsgType::Shutdown, MsgClass::Di);
                x.recipient = s;
                x.params = vec![p];
                x
            })
            .collect::<Vec<_>>()
    };
    let r = sh.call(phase(DRAIN));
    wait_idle(sh, 1);
    let r = r.and_then(|_| sh.call(phase(EXIT)));
    sh.reply(m, r.map(|_| Vec::new()));
    sh.exit.store(true, Ordering::Relaxed);
}

// ---------------------------------------------------------------------------
// Controller requests

fn open(sh: &Shared, m: &Message) -> Result<(u32, u64), Status> {
    let mut r = Reader::new(&m.params);
    let bad = |_| Status::BadRequest;
    let flags = r.u32().map_err(bad)?;
    let name = r.str().map_err(bad)?;
    let hint = r.bytes().map_err(bad)?;
    amode::check(flags)?;
    let mut ctl = sh.ctl.lock().unwrap();
    if let Some(f) = ctl.files.get(&name) {
        if flags & amode::CREATE != 0 && flags & amode::EXCL != 0 {
            return Err(Status::Exists);
        }
        return Ok((f.id, sh.file(f.id)?.size()));
    }
    if flags & amode::CREATE == 0 {
        return Err(Status::NoSuchFile);
    }
    let admin = if hint.is_empty() {
        None
    } else {
        match Hint::decode(hint) {
            Ok(Hint::FileAdministration(a)) => Some(a),
            _ => return Err(Status::InvalidHint),
        }
    };
    let (layout, known) = build_layout(&sh.cfg, admin.as_ref())?;
    let id = ctl.next_file;
    ctl.next_file += 1;
    let mut msgs = Vec::new();
    let mut local = None;
    for s in sh.cfg.server_ids() {
        let mut p = Vec::new();
        layout.local_view(s).encode_into(&mut p);
        let mut w = Writer::new().u8(admin_op::REGISTER).u64(0).bytes(&p);
        w = if known {
            let mut l = Vec::new();
            layout.encode_into(&mut l);
            w.u8(1).bytes(&l)
        } else {
            w.u8(0)
        };
        let mut reg = Message::new(MsgType::Admin, MsgClass::Di);
        reg.recipient = s;
        reg.file = id;
        reg.params = w.finish();
        if s == sh.id {
            local = Some(reg);
        } else {
            msgs.push(reg);
        }
    }
    if let Some(reg) = local {
        register(sh, &reg)?;
    }
    sh.call(msgs)?;
    ctl.files.insert(name, CtlFile { id, layout });
    Ok((id, 0))
}

/// The layout of a new file, and whether every server should know it.
fn build_layout(cfg: &ClusterConfig, admin: Option<&FileAdmin>) -> Result<(Layout, bool), Status> {
    let ids = cfg.server_ids();
    let targets: Vec<_> = ids.iter().map(|&s| (s, BEST_DISK)).collect();
    fn invalid<E>(_: E) -> Status {
        Status::InvalidHint
    }
    let owner = |o: u32| {
        if ids.contains(&o) {
            Ok(o)
        } else {
            Err(Status::InvalidHint)
        }
    };
    match admin {
        None => Ok((
            Layout::striped(cfg.stripe, targets).map_err(invalid)?,
            false,
        )),
        Some(FileAdmin::Striped { stripe }) => {
            Ok((Layout::striped(*stripe, targets).map_err(invalid)?, true))
        }
        Some(FileAdmin::Distribution { descriptor, owners }) => {
            let mut sets = Vec::new();
            for rank in 0..descriptor.num_procs() {
                let pv = build_process_view(descriptor, rank).map_err(invalid)?;
                let runs = pv.descriptor.enumerate_runs(0, 0, pv.total_bytes);
                let server = match owners {
                    Some(o) => owner(*o.get(rank as usize).ok_or(Status::InvalidHint)?)?,
                    None => ids[rank as usize % ids.len()],
                };
                sets.push((server, BEST_DISK, runs));
            }
            let l = Layout::static_fit(&sets, descriptor.global_bytes(), cfg.stripe, targets)
                .map_err(invalid)?;
            Ok((l, true))
        }
        Some(FileAdmin::AccessSet { file_size, entries }) => {
            let mut sets = Vec::new();
            for (o, disp, desc) in entries {
                let runs = desc.enumerate_runs(*disp, 0, desc.total_actual());
                sets.push((owner(*o)?, BEST_DISK, runs));
            }
            let l = Layout::static_fit(&sets, *file_size, cfg.stripe, targets).map_err(invalid)?;
            Ok((l, true))
        }
    }
}

fn remove(sh: &Shared, m: &Message) -> Result<Vec<u8>, Status> {
    let name = Reader::new(&m.params)
        .str()
        .map_err(|_| Status::BadRequest)?;
    let mut ctl = sh.ctl.lock().unwrap();
    let id = ctl.files.get(&name).ok_or(Status::NoSuchFile)?.id;
    let unreg = |to: NodeId| {
        let mut x = Message::new(MsgType::Admin, MsgClass::Di);
        x.recipient = to;
        x.file = id;
        x.params = vec![admin_op::UNREGISTER];
        x
    };
    register(sh, &unreg(sh.id))?;
    sh.call(sh.others().into_iter().map(unreg).collect())?;
    ctl.files.remove(&name);
    Ok(Vec::new())
}

/// Replies with the full layout and size of a named file.
fn layout_query(sh: &Shared, m: &Message) {
    let mut r = Reader::new(&m.params);
    let res = (|| {
        if r.u8().map_err(|_| Status::BadRequest)? != admin_op::LAYOUT {
            return Err(Status::BadRequest);
        }
        let name = r.str().map_err(|_| Status::BadRequest)?;
        let ctl = sh.ctl.lock().unwrap();
        let f = ctl.files.get(&name).ok_or(Status::NoSuchFile)?;
        let mut blob = Vec::new();
        f.layout.encode_into(&mut blob);
        Ok((
            f.id,
            Writer::new()
                .bytes(&blob)
                .u64(sh.file(f.id)?.size())
                .finish(),
        ))
    })();
    match res {
        Ok((id, params)) => {
            let mut a = m.ack(sh.id);
            a.file = id;
            a.params = params;
            sh.send(a);
        }
        Err(s) => sh.reply(m, Err(s)),
    }
}

fn hint(sh: &Shared, m: &Message) -> Result<Option<Vec<u8>>, Status> {
    match Hint::decode(&m.params).map_err(|_| Status::InvalidHint)? {
        Hint::Prefetch(_) => Ok(Some(Vec::new())),
        Hint::FileAdministration(_) => Err(Status::InvalidHint),
        Hint::Administration {
            server,
            best_disk,
            latency_ms_per_mib,
        } => {
            if server != sh.id {
                if m.class != MsgClass::Er || sh.cfg.server(server).is_none() {
                    return Err(Status::InvalidHint);
                }
                let mut f = m.clone();
                f.class = MsgClass::Di;
                f.recipient = server;
                sh.send(f);
                // the target server answers the client
                return Ok(None);
            }
            if let Some(d) = best_disk {
                if d as usize >= sh.disks.len() {
                    return Err(Status::InvalidHint);
                }
                *sh.best_disk.lock().unwrap() = d;
            }
            if let Some(l) = latency_ms_per_mib {
                for d in &sh.disks {
                    d.set_latency(l);
                }
            }
            Ok(Some(Vec::new()))
        }
    }
}

// ---------------------------------------------------------------------------
// Transfers

fn seg_bytes(segs: &[Segment]) -> u64 {
    segs.iter().map(|s| s.len).sum()
}

/// Cuts segments into consecutive chunks of at most `chunk` bytes.
fn chunks(segs: &[Segment], chunk: u64) -> Vec<Vec<Segment>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut room = chunk;
    for s in segs {
        let mut s = *s;
        while s.len > 0 {
            let take = s.len.min(room);
            cur.push(Segment { len: take, ..s });
            s.file_offset += take;
            s.stream_offset += take;
            s.len -= take;
            room -= take;
            if room == 0 {
                out.push(std::mem::take(&mut cur));
                room = chunk;
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Bytes of `segs` taken from a stream buffer, concatenated.
fn pack(stream: &[u8], segs: &[Segment]) -> Vec<u8> {
    let mut out = Vec::with_capacity(seg_bytes(segs) as usize);
    for s in segs {
        out.extend_from_slice(
            &stream[s.stream_offset as usize..(s.stream_offset + s.len) as usize],
        );
    }
    out
}

/// The bytes of `s` within data packed in the order of `segs`.
fn unpack<'a>(segs: &[Segment], packed: &'a [u8], s: &Segment) -> Option<&'a [u8]> {
    let mut at = 0u64;
    for p in segs {
        if s.stream_offset >= p.stream_offset && s.stream_offset < p.stream_offset + p.len {
            let from = (at + s.stream_offset - p.stream_offset) as usize;
            return packed.get(from..from + s.len as usize);
        }
        at += p.len;
    }
    None
}

fn read_segments(sh: &Shared, entry: &FileEntry, segs: &[Segment]) -> Result<Vec<u8>, Status> {
    let mut out = vec![0u8; seg_bytes(segs) as usize];
    for r in disk_runs(entry, segs)? {
        sh.disk(r.disk)?
            .read(entry.id, r.physical, &mut out[r.at..r.at + r.len])
            .map_err(|_| Status::IoFailure)?;
    }
    Ok(out)
}

/// Writes data packed in the order of `segs`.
fn write_segments(
    sh: &Shared,
    entry: &FileEntry,
    segs: &[Segment],
    data: &[u8],
) -> Result<(), Status> {
    if data.len() as u64 != seg_bytes(segs) {
        return Err(Status::BadRequest);
    }
    for r in disk_runs(entry, segs)? {
        sh.disk(r.disk)?
            .write(entry.id, r.physical, &data[r.at..r.at + r.len])
            .map_err(|_| Status::IoFailure)?;
    }
    Ok(())
}

/// One disk access: `len` bytes at `physical` on `disk`, at `at` in the
/// packed buffer.
#[derive(Debug, PartialEq)]
struct DiskRun {
    disk: u32,
    physical: u64,
    at: usize,
    len: usize,
}

/// Local pieces of `segs` in buffer order, merging pieces that continue
/// each other both on disk and in the buffer.
fn disk_runs(entry: &FileEntry, segs: &[Segment]) -> Result<Vec<DiskRun>, Status> {
    let mut runs: Vec<DiskRun> = Vec::new();
    let mut at = 0usize;
    for s in segs {
        let (pieces, foreign) = entry.portions.split(s.file_offset, s.len);
        if !foreign.is_empty() {
            return Err(Status::IoFailure);
        }
        for p in pieces {
            let o = at + (p.logical - s.file_offset) as usize;
            match runs.last_mut() {
                Some(r)
                    if r.disk == p.disk
                        && r.physical + r.len as u64 == p.physical
                        && r.at + r.len == o =>
                {
                    r.len += p.len as usize;
                }
                _ => runs.push(DiskRun {
                    disk: p.disk,
                    physical: p.physical,
                    at: o,
                    len: p.len as usize,
                }),
            }
        }
        at += s.len as usize;
    }
    Ok(runs)
}

/// Acknowledgements of one request from this server. The buddy's first
/// acknowledgement carries the summary.
struct Replies<'a> {
    sh: &'a Shared,
    m: &'a Message,
    summary: Option<u64>,
}

impl Replies<'_> {
    fn ack(&mut self, flags: u8, done: u64, segments: Vec<Segment>, status: i32, data: Vec<u8>) {
        let mut t = TransferAck {
            flags,
            total: 0,
            done,
            segments,
        };
        if let Some(total) = self.summary.take() {
            t.flags |= TransferAck::SUMMARY;
            t.total = total;
        }
        let mut a = self.m.ack(self.sh.id);
        a.params = t.encode();
        a.status = status;
        a.data = data;
        self.sh.send(a);
    }

    fn fail(&mut self, s: Status, unaccounted: u64) {
        self.ack(
            TransferAck::FINAL,
            unaccounted,
            Vec::new(),
            s.code(),
            Vec::new(),
        );
    }

    fn data(&self, data: Vec<u8>) {
        let mut d = Message::new(MsgType::Data, MsgClass::Ack);
        d.recipient = self.m.client;
        d.client = self.m.client;
        d.request = self.m.request;
        d.file = self.m.file;
        d.data = data;
        self.sh.send(d);
    }
}

fn serve_read(sh: &Shared, m: &Message, entry: &FileEntry, segs: &[Segment], summary: Option<u64>) {
    let mut out = Replies { sh, m, summary };
    let bytes = seg_bytes(segs);
    if bytes == 0 {
        if out.summary.is_some() {
            out.ack(TransferAck::FINAL, 0, Vec::new(), 0, Vec::new());
        }
        return;
    }
    let method = choose_transmission(bytes, sh.cfg.inline_threshold);
    let grant = sh.buffer.acquire(bytes);
    let parts = chunks(segs, grant.bytes());
    let n = parts.len();
    let mut sent = 0;
    for (i, part) in parts.into_iter().enumerate() {
        let len = seg_bytes(&part);
        let data = match read_segments(sh, entry, &part) {
            Ok(d) => d,
            Err(s) => return out.fail(s, bytes - sent),
        };
        let last = if i + 1 == n { TransferAck::FINAL } else { 0 };
        match method {
            Transmission::Inline => out.ack(last, len, part, 0, data),
            Transmission::SeparateData => {
                out.ack(last | TransferAck::DATA_FOLLOWS, len, part, 0, Vec::new());
                out.data(data);
            }
        }
        sent += len;
    }
}

/// Asks the client for the bytes of `segs` chunk by chunk and stores them.
fn serve_write(
    sh: &Shared,
    m: &Message,
    entry: &FileEntry,
    segs: &[Segment],
    summary: Option<u64>,
) {
    let mut out = Replies { sh, m, summary };
    let bytes = seg_bytes(segs);
    if bytes == 0 {
        if out.summary.is_some() {
            out.ack(TransferAck::FINAL, 0, Vec::new(), 0, Vec::new());
        }
        return;
    }
    let grant = sh.buffer.acquire(bytes);
    let waiter = sh.wait_for(m.client, m.request);
    let mut written = 0;
    for part in chunks(segs, grant.bytes()) {
        let len = seg_bytes(&part);
        out.ack(TransferAck::WANT_DATA, 0, part.clone(), 0, Vec::new());
        let r = waiter
            .next()
            .and_then(|d| write_segments(sh, entry, &part, &d.data));
        if let Err(s) = r {
            return out.fail(s, bytes - written);
        }
        written += len;
    }
    out.ack(TransferAck::FINAL, bytes, Vec::new(), 0, Vec::new());
}

/// Sends the remote parts of a fragmented request.
fn send_subrequests(
    sh: &Shared,
    m: &Message,
    directed: &[(NodeId, Vec<Segment>)],
    broadcast: &[Segment],
    file_end: u64,
    stream: Option<&[u8]>,
) {
    let sub = |to: NodeId, class: MsgClass, segs: &[Segment]| {
        let mut x = Message::new(m.msg_type, class);
        x.recipient = to;
        x.client = m.client;
        x.request = m.request;
        x.file = m.file;
        x.params = SubRequest {
            separate_data: stream.is_none(),
            file_end,
            segments: segs.to_vec(),
        }
        .encode();
        if let Some(s) = stream {
            x.data = pack(s, segs);
        }
        x
    };
    for (to, segs) in directed {
        sh.send(sub(*to, MsgClass::Di, segs));
    }
    if !broadcast.is_empty() {
        sh.post.stats().record_broadcast();
        for to in sh.others() {
            sh.send(sub(to, MsgClass::Bi, broadcast));
        }
    }
}

fn request_parts(
    sh: &Shared,
    m: &Message,
) -> Result<(IoRequest, Arc<FileEntry>, Arc<View>), Status> {
    let req = IoRequest::decode(&m.params).map_err(|_| Status::BadRequest)?;
    let entry = sh.file(m.file)?;
    let view = view_of(sh, m.client, req.view_id)?;
    Ok((req, entry, view))
}

fn buddy_read(sh: &Shared, m: &Message) {
    let early = |s: Status| {
        Replies {
            sh,
            m,
            summary: Some(0),
        }
        .fail(s, 0)
    };
    let (req, entry, view) = match request_parts(sh, m) {
        Ok(p) => p,
        Err(s) => return early(s),
    };
    let _g = entry.rw.read().unwrap();
    let size = entry.size();
    let total = req
        .length
        .min(view.len_within(size).saturating_sub(req.view_offset));
    let segs = vipios_core::layout::segments_of(&view.runs(req.view_offset, total));
    let frag = fragment(&segs, &entry.portions, entry.layout.as_ref());
    if !frag.broadcast.is_empty() && !sh.cfg.broadcast {
        return early(Status::UnknownFile);
    }
    send_subrequests(sh, m, &frag.directed, &frag.broadcast, size, None);
    serve_read(sh, m, &entry, &frag.local, Some(total));
}

fn buddy_write(sh: &Shared, m: &Message) {
    let early = |s: Status| {
        Replies {
            sh,
            m,
            summary: Some(0),
        }
        .fail(s, 0)
    };
    let (req, entry, view) = match request_parts(sh, m) {
        Ok(p) => p,
        Err(s) => return early(s),
    };
    let inline = choose_transmission(req.length, sh.cfg.inline_threshold) == Transmission::Inline;
    if inline && m.data.len() as u64 != req.length {
        return early(Status::BadRequest);
    }
    let _g = entry.rw.read().unwrap();
    let runs = view.runs(req.view_offset, req.length);
    let end = runs.iter().map(|r| r.end()).max().unwrap_or(0);
    if end > entry.size() {
        if let Err(s) = propagate_size(sh, &entry, end, size_mode::GROW) {
            return early(s);
        }
    }
    let segs = vipios_core::layout::segments_of(&runs);
    let frag = fragment(&segs, &entry.portions, entry.layout.as_ref());
    if !frag.broadcast.is_empty() && !sh.cfg.broadcast {
        return early(Status::UnknownFile);
    }
    let file_end = entry.size();
    if inline {
        send_subrequests(
            sh,
            m,
            &frag.directed,
            &frag.broadcast,
            file_end,
            Some(&m.data),
        );
        let local = seg_bytes(&frag.local);
        let status = match write_segments(sh, &entry, &frag.local, &pack(&m.data, &frag.local)) {
            Ok(()) => 0,
            Err(s) => s.code(),
        };
        Replies {
            sh,
            m,
            summary: Some(req.length),
        }
        .ack(TransferAck::FINAL, local, Vec::new(), status, Vec::new());
    } else {
        send_subrequests(sh, m, &frag.directed, &frag.broadcast, file_end, None);
        serve_write(sh, m, &entry, &frag.local, Some(req.length));
    }
}

/// Owned and foreign parts of a sub-request at this server.
fn sub_parts(sh: &Shared, m: &Message) -> Result<(SubRequest, Arc<FileEntry>), Status> {
    let sub = SubRequest::decode(&m.params).map_err(|_| Status::BadRequest)?;
    let entry = sh.file(m.file)?;
    Ok((sub, entry))
}

fn participant_read(sh: &Shared, m: &Message) {
    let directed = m.class == MsgClass::Di;
    let (sub, entry) = match sub_parts(sh, m) {
        Ok(p) => p,
        Err(s) => {
            if directed {
                let n = SubRequest::decode(&m.params).map_or(0, |r| seg_bytes(&r.segments));
                Replies {
                    sh,
                    m,
                    summary: None,
                }
                .fail(s, n);
            }
            return;
        }
    };
    let _g = entry.rw.read().unwrap();
    let f = fragment(&sub.segments, &entry.portions, None);
    if directed && !f.broadcast.is_empty() {
        Replies {
            sh,
            m,
            summary: None,
        }
        .fail(Status::BadRequest, seg_bytes(&f.broadcast));
    }
    if !f.local.is_empty() {
        serve_read(sh, m, &entry, &f.local, None);
    }
}

fn participant_write(sh: &Shared, m: &Message) {
    let directed = m.class == MsgClass::Di;
    let (sub, entry) = match sub_parts(sh, m) {
        Ok(p) => p,
        Err(s) => {
            if directed {
                let n = SubRequest::decode(&m.params).map_or(0, |r| seg_bytes(&r.segments));
                Replies {
                    sh,
                    m,
                    summary: None,
                }
                .fail(s, n);
            }
            return;
        }
    };
    let _g = entry.rw.read().unwrap();
    let _ = apply_size(sh, &entry, sub.file_end, size_mode::GROW);
    let f = fragment(&sub.segments, &entry.portions, None);
    if directed && !f.broadcast.is_empty() {
        Replies {
            sh,
            m,
            summary: None,
        }
        .fail(Status::BadRequest, seg_bytes(&f.broadcast));
    }
    if f.local.is_empty() {
        return;
    }
    if sub.separate_data {
        return serve_write(sh, m, &entry, &f.local, None);
    }
    let mut status = 0;
    for s in &f.local {
        let r = unpack(&sub.segments, &m.data, s)
            .ok_or(Status::BadRequest)
            .and_then(|d| write_segments(sh, &entry, std::slice::from_ref(s), d));
        if let Err(e) = r {
            status = e.code();
            break;
        }
    }
    Replies {
        sh,
        m,
        summary: None,
    }
    .ack(
        TransferAck::FINAL,
        seg_bytes(&f.local),
        Vec::new(),
        status,
        Vec::new(),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(f: u64, l: u64, s: u64) -> Segment {
        Segment {
            file_offset: f,
            len: l,
            stream_offset: s,
        }
    }

    #[test]
    fn chunking_preserves_bytes() {
        let segs = vec![seg(0, 5, 0), seg(10, 7, 5)];
        let c = chunks(&segs, 4);
        assert_eq!(c.len(), 3);
        assert_eq!(
            c.iter().map(|p| seg_bytes(p)).collect::<Vec<_>>(),
            vec![4, 4, 4]
        );
        assert_eq!(c[1], vec![seg(4, 1, 4), seg(10, 3, 5)]);
        assert_eq!(chunks(&segs, 100).len(), 1);
    }

    #[test]
    fn pack_and_unpack() {
        let stream: Vec<u8> = (0..20).collect();
        let segs = vec![seg(100, 3, 2), seg(200, 4, 10)];
        let packed = pack(&stream, &segs);
        assert_eq!(packed, vec![2, 3, 4, 10, 11, 12, 13]);
        assert_eq!(
            unpack(&segs, &packed, &seg(201, 2, 11)),
            Some(&[11u8, 12][..])
        );
        assert_eq!(unpack(&segs, &packed, &seg(0, 1, 6)), None);
    }
}
