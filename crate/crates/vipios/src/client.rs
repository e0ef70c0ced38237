//! Client library.
//!
//! A [`Session`] talks to its buddy server. Open files live in a
//! [`HandleTable`]; each keeps a view and a position counted in view bytes.
//! A background thread receives acknowledgements, answers requests for
//! write data and assembles read data; blocking calls are non-blocking
//! calls followed by a wait.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use vipios_core::datatypes::DatatypeError;
use vipios_core::layout::{Layout, Segment};
use vipios_core::protocol::params::{IoRequest, Reader, TransferAck, Writer};
use vipios_core::protocol::{
    choose_transmission, Message, MsgClass, MsgType, Status, Transmission,
};
use vipios_core::viewdesc::{build_descriptor, byte_to_etype, ViewError};
use vipios_core::{AccessDesc, BaseType, DatatypeTree, View};

use crate::amode;
use crate::config::ClusterConfig;
use crate::hints::Hint;
use crate::server::{admin_op, size_mode};
use crate::transport::{Endpoint, NetError, Network, NodeId, Postman};

const WAIT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("not connected")]
    NotConnected,
    #[error("no connection controller answered")]
    NoController,
    #[error("connection refused")]
    Refused,
    #[error("bad file handle")]
    BadHandle,
    #[error("etype does not match the filetype")]
    EtypeMismatch,
    #[error("unsupported data representation")]
    UnsupportedRepresentation,
    #[error("file not opened for reading")]
    NotReadable,
    #[error("file not opened for writing")]
    NotWritable,
    #[error("unknown request")]
    UnknownRequest,
    #[error("request not finished")]
    UnfinishedRequest,
    #[error("offset not aligned to the etype")]
    NotAligned,
    #[error("bad whence")]
    BadWhence,
    #[error("negative position")]
    BadOffset,
    #[error("operation not supported")]
    Unsupported,
    #[error("buffer too small")]
    BufferTooSmall,
    #[error("invalid datatype: {0}")]
    Datatype(String),
    #[error("request timed out")]
    Timeout,
    #[error("session disconnected")]
    Disconnected,
    #[error("server status {0:?}")]
    Server(Status),
    #[error("network: {0}")]
    Net(String),
}

impl From<NetError> for ClientError {
    fn from(e: NetError) -> Self {
        ClientError::Net(e.to_string())
    }
}

impl From<ViewError> for ClientError {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::EtypeMismatch { .. } => ClientError::EtypeMismatch,
            ViewError::NotAligned { .. } => ClientError::NotAligned,
            other => ClientError::Datatype(other.to_string()),
        }
    }
}

impl From<DatatypeError> for ClientError {
    fn from(e: DatatypeError) -> Self {
        ClientError::Datatype(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Small integer index into the handle table.
pub type Handle = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoStatus {
    /// Handle of the file, or −1 while a non-blocking operation runs.
    pub file_ref: i64,
    pub bytes_transferred: u64,
}

impl IoStatus {
    pub const UNFINISHED: IoStatus = IoStatus {
        file_ref: -1,
        bytes_transferred: 0,
    };
}

/// Elements of `etype` accounted for by `status`.
pub fn get_count(status: &IoStatus, etype: BaseType) -> Result<u64> {
    if status.file_ref < 0 {
        return Err(ClientError::UnfinishedRequest);
    }
    Ok(status.bytes_transferred / etype.extent())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Whence {
    Set,
    Cur,
    End,
}

impl Whence {
    /// Maps the numeric codes 0, 1, 2.
    pub fn from_code(c: i32) -> Result<Whence> {
        match c {
            0 => Ok(Whence::Set),
            1 => Ok(Whence::Cur),
            2 => Ok(Whence::End),
            _ => Err(ClientError::BadWhence),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FileView {
    pub view: View,
    pub filetype: Option<DatatypeTree>,
    /// Server-side view id; 0 for contiguous views.
    pub view_id: u32,
    pub is_set: bool,
}

#[derive(Debug, Clone)]
pub struct FileState {
    pub file_id: u32,
    pub name: String,
    pub flags: u32,
    pub view: FileView,
    /// Position in view bytes.
    pub position: u64,
    pub accessed: bool,
}

/// Open files by handle. Handles are allocated in increasing order and
/// not reused until every file is closed, at which point the table is
/// cleared.
#[derive(Debug, Clone)]
pub struct HandleTable {
    slots: Vec<Option<FileState>>,
    next: usize,
    open: usize,
}

impl HandleTable {
    pub const INITIAL: usize = 10;
    pub const GROWTH: usize = 5;

    pub fn new() -> Self {
        HandleTable {
            slots: vec![None; Self::INITIAL],
            next: 0,
            open: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn n_open(&self) -> usize {
        self.open
    }

    pub fn insert(&mut self, f: FileState) -> Handle {
        if self.next == self.slots.len() {
            self.slots.resize(self.slots.len() + Self::GROWTH, None);
        }
        let h = self.next;
        self.slots[h] = Some(f);
        self.next += 1;
        self.open += 1;
        h
    }

    pub fn get(&self, h: Handle) -> Result<&FileState> {
        self.slots
            .get(h)
            .and_then(Option::as_ref)
            .ok_or(ClientError::BadHandle)
    }

    pub fn get_mut(&mut self, h: Handle) -> Result<&mut FileState> {
        self.slots
            .get_mut(h)
            .and_then(Option::as_mut)
            .ok_or(ClientError::BadHandle)
    }

    pub fn remove(&mut self, h: Handle) -> Result<FileState> {
        let f = self
            .slots
            .get_mut(h)
            .and_then(Option::take)
            .ok_or(ClientError::BadHandle)?;
        self.open -= 1;
        if self.open == 0 {
            *self = HandleTable::new();
        }
        Ok(f)
    }

    pub fn handles(&self) -> Vec<Handle> {
        (0..self.slots.len())
            .filter(|&h| self.slots[h].is_some())
            .collect()
    }
}

impl Default for HandleTable {
    fn default() -> Self {
        Self::new()
    }
}

/// A non-blocking operation in flight.
#[derive(Debug)]
pub struct Request {
    id: u32,
    handle: Handle,
    buf: Option<Vec<u8>>,
    scatter: Option<DatatypeTree>,
    result: Option<Result<IoStatus>>,
}

impl Request {
    pub fn id(&self) -> u32 {
        self.id
    }

    /// The read buffer once the request has completed.
    pub fn take_buffer(&mut self) -> Option<Vec<u8>> {
        if self.result.is_some() {
            self.buf.take()
        } else {
            None
        }
    }
}

enum Kind {
    Simple(Option<Message>),
    Read {
        buf: Vec<u8>,
        queued: HashMap<u32, VecDeque<Vec<Segment>>>,
    },
    Write {
        stream: Vec<u8>,
    },
}

struct Pending {
    kind: Kind,
    file: u32,
    total: Option<u64>,
    accounted: u64,
    error: Option<ClientError>,
    done: bool,
}

impl Pending {
    fn new(kind: Kind, file: u32) -> Self {
        Pending {
            kind,
            file,
            total: None,
            accounted: 0,
            error: None,
            done: false,
        }
    }
}

struct Inner {
    id: NodeId,
    post: Postman,
    pending: Mutex<HashMap<u32, Pending>>,
    cv: Condvar,
    stop: AtomicBool,
    next_request: AtomicU32,
}

fn place(buf: &mut [u8], segs: &[Segment], data: &[u8]) {
    let mut at = 0usize;
    for s in segs {
        let from = s.stream_offset as usize;
        let n = s.len as usize;
        if let (Some(dst), Some(src)) = (buf.get_mut(from..from + n), data.get(at..at + n)) {
            dst.copy_from_slice(src);
        }
        at += n;
    }
}

impl Inner {
    fn handle(&self, m: Message) {
        let mut pending = self.pending.lock().unwrap();
        let Some(p) = pending.get_mut(&m.request) else {
            return;
        };
        match &mut p.kind {
            Kind::Simple(slot) => {
                if m.class == MsgClass::Ack && m.msg_type != MsgType::Data {
                    *slot = Some(m);
                    p.done = true;
                }
            }
            Kind::Read { buf, queued } => {
                if m.msg_type == MsgType::Data {
                    if let Some(segs) = queued.get_mut(&m.sender).and_then(VecDeque::pop_front) {
                        place(buf, &segs, &m.data);
                        p.accounted += m.data.len() as u64;
                    }
                } else if let Ok(t) = TransferAck::decode(&m.params) {
                    if t.has(TransferAck::SUMMARY) {
                        p.total = Some(t.total);
                    }
                    if m.status < 0 {
                        p.error.get_or_insert(status_error(m.status));
                        p.accounted += t.done;
                    } else if t.has(TransferAck::DATA_FOLLOWS) {
                        queued.entry(m.sender).or_default().push_back(t.segments);
                    } else {
                        place(buf, &t.segments, &m.data);
                        p.accounted += t.done;
                    }
                }
            }
            Kind::Write { stream } => {
                if let Ok(t) = TransferAck::decode(&m.params) {
                    if t.has(TransferAck::SUMMARY) {
                        p.total = Some(t.total);
                    }
                    if m.status < 0 {
                        p.error.get_or_insert(status_error(m.status));
                        p.accounted += t.done;
                    } else if t.has(TransferAck::WANT_DATA) {
                        let mut d = Message::new(MsgType::Data, MsgClass::Er);
                        d.recipient = m.sender;
                        d.client = self.id;
                        d.request = m.request;
                        d.file = p.file;
                        for s in &t.segments {
                            let from = s.stream_offset as usize;
                            d.data
                                .extend_from_slice(&stream[from..from + s.len as usize]);
                        }
                        let _ = self.post.send(d);
                    } else {
                        p.accounted += t.done;
                    }
                }
            }
        }
        if let Some(total) = p.total {
            if p.accounted >= total {
                p.done = true;
            }
        }
        if p.done {
            self.cv.notify_all();
        }
    }

    fn submit(&self, mut m: Message, kind: Kind) -> Result<u32> {
        if self.stop.load(Ordering::Relaxed) {
            return Err(ClientError::NotConnected);
        }
        let id = self.next_request.fetch_add(1, Ordering::Relaxed);
        m.client = self.id;
        m.request = id;
        self.pending
            .lock()
            .unwrap()
            .insert(id, Pending::new(kind, m.file));
        if let Err(e) = self.post.send(m) {
            self.pending.lock().unwrap().remove(&id);
            return Err(e.into());
        }
        Ok(id)
    }

    fn is_done(&self, id: u32) -> Result<bool> {
        self.pending
            .lock()
            .unwrap()
            .get(&id)
            .map(|p| p.done)
            .ok_or(ClientError::UnknownRequest)
    }

    fn wait(&self, id: u32) -> Result<Pending> {
        let deadline = Instant::now() + WAIT_TIMEOUT;
        let mut pending = self.pending.lock().unwrap();
        loop {
            match pending.get(&id) {
                None => return Err(ClientError::UnknownRequest),
                Some(p) if p.done => return Ok(pending.remove(&id).unwrap()),
                Some(_) => {}
            }
            let now = Instant::now();
            if now >= deadline {
                pending.remove(&id);
                return Err(ClientError::Timeout);
            }
            pending = self.cv.wait_timeout(pending, deadline - now).unwrap().0;
        }
    }

    /// Sends `m` and waits for its acknowledgement.
    fn call(&self, m: Message) -> Result<Message> {
        let id = self.submit(m, Kind::Simple(None))?;
        let p = self.wait(id)?;
        if let Some(e) = p.error {
            return Err(e);
        }
        match p.kind {
            Kind::Simple(Some(a)) if a.status < 0 => Err(status_error(a.status)),
            Kind::Simple(Some(a)) => Ok(a),
            _ => Err(ClientError::Disconnected),
        }
    }

    fn fail_all(&self, e: ClientError) {
        let mut pending = self.pending.lock().unwrap();
        for p in pending.values_mut() {
            if !p.done {
                p.error = Some(e.clone());
                p.done = true;
            }
        }
        self.cv.notify_all();
    }
}

fn status_error(code: i32) -> ClientError {
    ClientError::Server(Status::from_code(code).unwrap_or(Status::IoFailure))
}

/// Outcome of a finished transfer.
fn transfer_result(p: Pending) -> Result<(u64, Vec<u8>)> {
    if let Some(e) = p.error {
        return Err(e);
    }
    let total = p.total.unwrap_or(0);
    match p.kind {
        Kind::Read { mut buf, .. } => {
            buf.truncate(total as usize);
            Ok((total, buf))
        }
        _ => Ok((total, Vec::new())),
    }
}

struct Connection {
    inner: Arc<Inner>,
    receiver: Option<JoinHandle<()>>,
    buddy: NodeId,
    controller: NodeId,
    servers: u32,
}

/// A client session. Create with [`Session::new`], then [`Session::connect`].
pub struct Session {
    net: Arc<dyn Network>,
    cfg: Arc<ClusterConfig>,
    conn: Option<Connection>,
    files: HandleTable,
    next_view: u32,
}

impl Session {
    pub fn new(net: Arc<dyn Network>, cfg: Arc<ClusterConfig>) -> Session {
        Session {
            net,
            cfg,
            conn: None,
            files: HandleTable::new(),
            next_view: 1,
        }
    }

    /// Creates a session and connects it.
    pub fn open_session(net: Arc<dyn Network>, cfg: Arc<ClusterConfig>) -> Result<Session> {
        let mut s = Session::new(net, cfg);
        s.connect(0)?;
        Ok(s)
    }

    /// Connects to system `system_id`; only system 0 exists.
    pub fn connect(&mut self, system_id: u32) -> Result<()> {
        if self.conn.is_some() || system_id != 0 {
            return Err(ClientError::Refused);
        }
        let cc = self.cfg.connection_controller();
        let temp = self.net.endpoint(self.net.provisional_id())?;
        let mut m = Message::new(MsgType::Connect, MsgClass::Er);
        m.recipient = cc;
        temp.send(m)?;
        let ack = loop {
            match temp.recv_timeout(WAIT_TIMEOUT) {
                Ok(a) if a.msg_type == MsgType::Connect && a.class == MsgClass::Ack => break a,
                Ok(_) => continue,
                Err(NetError::Timeout) => return Err(ClientError::NoController),
                Err(e) => return Err(e.into()),
            }
        };
        drop(temp);
        if ack.status == Status::NotController.code() {
            return Err(ClientError::NoController);
        }
        if ack.status < 0 {
            return Err(ClientError::Refused);
        }
        let mut r = Reader::new(&ack.params);
        let bad = |_| ClientError::Refused;
        let buddy = r.u32().map_err(bad)?;
        let controller = r.u32().map_err(bad)?;
        let servers = r.u32().map_err(bad)?;
        let ep = self.net.endpoint(ack.client)?;
        let inner = Arc::new(Inner {
            id: ack.client,
            post: ep.postman(),
            pending: Mutex::default(),
            cv: Condvar::new(),
            stop: AtomicBool::new(false),
            next_request: AtomicU32::new(1),
        });
        let rx = inner.clone();
        let receiver = thread::Builder::new()
            .name(format!("vipios-client-{}", ack.client))
            .spawn(move || receive(rx, ep))
            .map_err(|e| ClientError::Net(e.to_string()))?;
        self.conn = Some(Connection {
            inner,
            receiver: Some(receiver),
            buddy,
            controller,
            servers,
        });
        Ok(())
    }

    /// Releases the session; in-flight requests fail.
    pub fn disconnect(&mut self) -> Result<()> {
        let mut c = self.conn.take().ok_or(ClientError::NotConnected)?;
        let mut m = Message::new(MsgType::Disconnect, MsgClass::Er);
        m.recipient = self.cfg.connection_controller();
        let r = c.inner.call(m).map(|_| ());
        c.inner.stop.store(true, Ordering::Relaxed);
        c.inner.fail_all(ClientError::Disconnected);
        if let Some(j) = c.receiver.take() {
            let _ = j.join();
        }
        self.files = HandleTable::new();
        r
    }

    pub fn is_connected(&self) -> bool {
        self.conn.is_some()
    }

    pub fn client_id(&self) -> Option<NodeId> {
        self.conn.as_ref().map(|c| c.inner.id)
    }

    pub fn buddy(&self) -> Option<NodeId> {
        self.conn.as_ref().map(|c| c.buddy)
    }

    pub fn controller(&self) -> Option<NodeId> {
        self.conn.as_ref().map(|c| c.controller)
    }

    pub fn server_count(&self) -> Option<u32> {
        self.conn.as_ref().map(|c| c.servers)
    }

    pub fn handles(&self) -> &HandleTable {
        &self.files
    }

    fn conn(&self) -> Result<&Connection> {
        self.conn.as_ref().ok_or(ClientError::NotConnected)
    }

    fn to_buddy(&self, t: MsgType, file: u32, params: Vec<u8>) -> Result<Message> {
        let c = self.conn()?;
        let mut m = Message::new(t, MsgClass::Er);
        m.recipient = c.buddy;
        m.file = file;
        m.params = params;
        Ok(m)
    }

    fn call(&self, t: MsgType, file: u32, params: Vec<u8>) -> Result<Message> {
        let m = self.to_buddy(t, file, params)?;
        self.conn()?.inner.call(m)
    }

    // -- files --------------------------------------------------------------

    pub fn open(&mut self, name: &str, flags: u32) -> Result<Handle> {
        self.open_with_hint(name, flags, None)
    }

    /// Opens a file; a file administration hint fixes the layout of a file
    /// created by this call.
    pub fn open_with_hint(
        &mut self,
        name: &str,
        flags: u32,
        hint: Option<&Hint>,
    ) -> Result<Handle> {
        amode::check(flags).map_err(ClientError::Server)?;
        let blob = hint.map(Hint::encode).unwrap_or_default();
        let params = Writer::new().u32(flags).str(name).bytes(&blob).finish();
        let a = self.call(MsgType::Open, 0, params)?;
        let size = Reader::new(&a.params).u64().unwrap_or(0);
        let position = if flags & amode::APPEND != 0 { size } else { 0 };
        Ok(self.files.insert(FileState {
            file_id: a.file,
            name: name.to_string(),
            flags,
            view: FileView {
                view: View::bytes(0),
                filetype: None,
                view_id: 0,
                is_set: false,
            },
            position,
            accessed: false,
        }))
    }

    pub fn close(&mut self, h: Handle) -> Result<()> {
        let f = self.files.get(h)?.clone();
        let ids: &[u32] = if f.view.view_id != 0 {
            &[f.view.view_id]
        } else {
            &[]
        };
        let mut w = Writer::new().u32(ids.len() as u32);
        for id in ids {
            w = w.u32(*id);
        }
        self.call(MsgType::Close, f.file_id, w.finish())?;
        self.files.remove(h)?;
        if f.flags & amode::DELETE_ON_CLOSE != 0 {
            self.remove(&f.name)?;
        }
        Ok(())
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        self.call(MsgType::Remove, 0, Writer::new().str(name).finish())
            .map(|_| ())
    }

    pub fn file_state(&self, h: Handle) -> Result<&FileState> {
        self.files.get(h)
    }

    pub fn get_size(&self, h: Handle) -> Result<u64> {
        let f = self.files.get(h)?;
        let a = self.call(MsgType::GetSize, f.file_id, Vec::new())?;
        Reader::new(&a.params)
            .u64()
            .map_err(|_| ClientError::Server(Status::BadRequest))
    }

    /// Truncates or extends the file.
    pub fn set_size(&self, h: Handle, size: u64) -> Result<()> {
        let f = self.files.get(h)?;
        if !amode::writable(f.flags) {
            return Err(ClientError::NotWritable);
        }
        let p = Writer::new().u64(size).u8(size_mode::SET).finish();
        self.call(MsgType::SetSize, f.file_id, p).map(|_| ())
    }

    /// Extends the file to at least `size` bytes; never truncates.
    pub fn preallocate(&self, h: Handle, size: u64) -> Result<()> {
        let f = self.files.get(h)?;
        if !amode::writable(f.flags) {
            return Err(ClientError::NotWritable);
        }
        let p = Writer::new().u64(size).u8(size_mode::GROW).finish();
        self.call(MsgType::SetSize, f.file_id, p).map(|_| ())
    }

    pub fn get_amode(&self, h: Handle) -> Result<u32> {
        Ok(self.files.get(h)?.flags)
    }

    pub fn get_atomicity(&self, h: Handle) -> Result<bool> {
        self.files.get(h).map(|_| true)
    }

    pub fn set_atomicity(&self, h: Handle, atomic: bool) -> Result<()> {
        self.files.get(h)?;
        if atomic {
            Ok(())
        } else {
            Err(ClientError::Unsupported)
        }
    }

    /// Writes reach the portion files before they are acknowledged, so
    /// there is nothing left to flush.
    pub fn sync(&self, h: Handle) -> Result<()> {
        self.files.get(h).map(|_| ())
    }

    pub fn hint(&self, hint: &Hint) -> Result<()> {
        self.call(MsgType::Hint, 0, hint.encode()).map(|_| ())
    }

    /// Layout, file id and size of a named file.
    pub fn inspect(&self, name: &str) -> Result<(u32, Layout, u64)> {
        let a = self.call(
            MsgType::Admin,
            0,
            Writer::new().u8(admin_op::LAYOUT).str(name).finish(),
        )?;
        let mut r = Reader::new(&a.params);
        let bad = |_| ClientError::Server(Status::BadRequest);
        let blob = r.bytes().map_err(bad)?;
        let layout =
            Layout::decode(blob, &mut 0).map_err(|_| ClientError::Server(Status::BadRequest))?;
        let size = r.u64().map_err(bad)?;
        Ok((a.file, layout, size))
    }

    /// Asks the controller to drain and stop every server.
    pub fn shutdown_servers(&mut self) -> Result<()> {
        let r = self.call(MsgType::Shutdown, 0, Vec::new()).map(|_| ());
        if let Some(c) = self.conn.take() {
            c.inner.stop.store(true, Ordering::Relaxed);
            c.inner.fail_all(ClientError::Disconnected);
            if let Some(j) = c.receiver {
                let _ = j.join();
            }
        }
        self.files = HandleTable::new();
        r
    }

    // -- views --------------------------------------------------------------

    pub fn set_view(
        &mut self,
        h: Handle,
        disp: u64,
        etype: BaseType,
        filetype: &DatatypeTree,
        datarep: &str,
    ) -> Result<()> {
        if datarep != "native" {
            return Err(ClientError::UnsupportedRepresentation);
        }
        self.files.get(h)?;
        let view = View::new(disp, etype, filetype)?;
        self.install_view(h, view, Some(filetype.clone()))
    }

    /// Sets a view given directly as an access descriptor.
    pub fn set_view_desc(
        &mut self,
        h: Handle,
        disp: u64,
        etype: BaseType,
        desc: AccessDesc,
    ) -> Result<()> {
        self.files.get(h)?;
        if desc.total_actual() == 0 {
            return Err(ClientError::Datatype("empty view".into()));
        }
        self.install_view(h, View::from_desc(disp, etype, desc), None)
    }

    fn install_view(
        &mut self,
        h: Handle,
        view: View,
        filetype: Option<DatatypeTree>,
    ) -> Result<()> {
        let old = self.files.get(h)?.view.view_id;
        let file_id = self.files.get(h)?.file_id;
        let view_id = if view.contiguous {
            0
        } else {
            let id = self.next_view;
            self.next_view += 1;
            let p = Writer::new()
                .u32(id)
                .u64(view.disp)
                .u32(view.etype.code())
                .bytes(&view.desc.encode())
                .finish();
            self.call(MsgType::SetView, file_id, p)?;
            id
        };
        if old != 0 {
            self.call(
                MsgType::Close,
                file_id,
                Writer::new().u32(1).u32(old).finish(),
            )?;
        }
        let f = self.files.get_mut(h)?;
        f.view = FileView {
            view,
            filetype,
            view_id,
            is_set: true,
        };
        f.position = 0;
        Ok(())
    }

    pub fn get_view(&self, h: Handle) -> Result<(u64, BaseType, Option<DatatypeTree>)> {
        let v = &self.files.get(h)?.view;
        Ok((v.view.disp, v.view.etype, v.filetype.clone()))
    }

    fn etype(&self, h: Handle) -> Result<BaseType> {
        Ok(self.files.get(h)?.view.view.etype)
    }

    /// Position in etype units.
    pub fn get_position(&self, h: Handle) -> Result<u64> {
        let f = self.files.get(h)?;
        Ok(byte_to_etype(f.position, f.view.view.etype)?)
    }

    /// Absolute byte offset of view offset `offset` (etype units).
    pub fn get_byte_offset(&self, h: Handle, offset: u64) -> Result<u64> {
        let f = self.files.get(h)?;
        let v = &f.view.view;
        v.byte_offset(offset * v.etype.extent())
            .ok_or(ClientError::BadOffset)
    }

    /// Moves the position; `End` is the end of the view within the file.
    pub fn seek(&mut self, h: Handle, offset: i64, whence: Whence) -> Result<u64> {
        let ext = self.etype(h)?.extent() as i64;
        let base = match whence {
            Whence::Set => 0,
            Whence::Cur => self.files.get(h)?.position as i64,
            Whence::End => {
                let size = self.get_size(h)?;
                self.files.get(h)?.view.view.len_within(size) as i64
            }
        };
        let pos = base + offset * ext;
        if pos < 0 {
            return Err(ClientError::BadOffset);
        }
        self.files.get_mut(h)?.position = pos as u64;
        self.get_position(h)
    }

    // -- data access --------------------------------------------------------

    /// Issues a READ of `bytes` view bytes from view byte `at`.
    fn start_read(&mut self, h: Handle, at: u64, bytes: u64, explicit: bool) -> Result<u32> {
        let f = self.files.get(h)?;
        if !amode::readable(f.flags) {
            return Err(ClientError::NotReadable);
        }
        let (file_id, req) = io_request(f, at, bytes, explicit);
        let m = self.to_buddy(MsgType::Read, file_id, req.encode())?;
        let kind = Kind::Read {
            buf: vec![0; bytes as usize],
            queued: HashMap::new(),
        };
        let id = self.conn()?.inner.submit(m, kind)?;
        self.files.get_mut(h)?.accessed = true;
        Ok(id)
    }

    fn start_write(&mut self, h: Handle, at: u64, data: Vec<u8>, explicit: bool) -> Result<u32> {
        let f = self.files.get(h)?;
        if !amode::writable(f.flags) {
            return Err(ClientError::NotWritable);
        }
        let (file_id, req) = io_request(f, at, data.len() as u64, explicit);
        let mut m = self.to_buddy(MsgType::Write, file_id, req.encode())?;
        let inline = choose_transmission(data.len() as u64, self.cfg.inline_threshold)
            == Transmission::Inline;
        let kind = if inline {
            m.data = data;
            Kind::Write { stream: Vec::new() }
        } else {
            Kind::Write { stream: data }
        };
        let id = self.conn()?.inner.submit(m, kind)?;
        self.files.get_mut(h)?.accessed = true;
        Ok(id)
    }

    fn finish(&self, id: u32) -> Result<(u64, Vec<u8>)> {
        transfer_result(self.conn()?.inner.wait(id)?)
    }

    fn bytes_of(&self, h: Handle, count: u64) -> Result<u64> {
        Ok(count * self.etype(h)?.extent())
    }

    /// Reads `count` etypes at the position into `buf` and advances it.
    pub fn read(&mut self, h: Handle, buf: &mut [u8], count: u64) -> Result<IoStatus> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.files.get(h)?.position;
        let st = self.read_bytes(h, at, buf, bytes, false)?;
        self.files.get_mut(h)?.position = at + st.bytes_transferred;
        Ok(st)
    }

    /// Reads `count` etypes at view offset `offset` (etype units).
    pub fn read_at(
        &mut self,
        h: Handle,
        offset: u64,
        buf: &mut [u8],
        count: u64,
    ) -> Result<IoStatus> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.bytes_of(h, offset)?;
        self.read_bytes(h, at, buf, bytes, true)
    }

    fn read_bytes(
        &mut self,
        h: Handle,
        at: u64,
        buf: &mut [u8],
        bytes: u64,
        explicit: bool,
    ) -> Result<IoStatus> {
        if (buf.len() as u64) < bytes {
            return Err(ClientError::BufferTooSmall);
        }
        let id = self.start_read(h, at, bytes, explicit)?;
        let (n, data) = self.finish(id)?;
        buf[..n as usize].copy_from_slice(&data);
        Ok(IoStatus {
            file_ref: h as i64,
            bytes_transferred: n,
        })
    }

    pub fn write(&mut self, h: Handle, buf: &[u8], count: u64) -> Result<IoStatus> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.files.get(h)?.position;
        let st = self.write_bytes(h, at, buf, bytes, false)?;
        self.files.get_mut(h)?.position = at + st.bytes_transferred;
        Ok(st)
    }

    pub fn write_at(&mut self, h: Handle, offset: u64, buf: &[u8], count: u64) -> Result<IoStatus> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.bytes_of(h, offset)?;
        self.write_bytes(h, at, buf, bytes, true)
    }

    fn write_bytes(
        &mut self,
        h: Handle,
        at: u64,
        buf: &[u8],
        bytes: u64,
        explicit: bool,
    ) -> Result<IoStatus> {
        let data = buf
            .get(..bytes as usize)
            .ok_or(ClientError::BufferTooSmall)?
            .to_vec();
        let id = self.start_write(h, at, data, explicit)?;
        let (n, _) = self.finish(id)?;
        Ok(IoStatus {
            file_ref: h as i64,
            bytes_transferred: n,
        })
    }

    /// Reads `count` instances of `memtype` at the position, scattering
    /// them into `buf` as the memory datatype lays them out.
    pub fn read_typed(
        &mut self,
        h: Handle,
        buf: &mut [u8],
        count: u64,
        memtype: &DatatypeTree,
    ) -> Result<IoStatus> {
        let bytes = self.typed_bytes(h, buf.len(), count, memtype)?;
        let mut stream = vec![0; bytes as usize];
        let at = self.files.get(h)?.position;
        let st = self.read_bytes(h, at, &mut stream, bytes, false)?;
        self.files.get_mut(h)?.position = at + st.bytes_transferred;
        scatter(memtype, buf, &stream[..st.bytes_transferred as usize])?;
        Ok(st)
    }

    /// Gathers `count` instances of `memtype` from `buf` and writes them at
    /// the position.
    pub fn write_typed(
        &mut self,
        h: Handle,
        buf: &[u8],
        count: u64,
        memtype: &DatatypeTree,
    ) -> Result<IoStatus> {
        let bytes = self.typed_bytes(h, buf.len(), count, memtype)?;
        let stream = gather(memtype, buf, bytes)?;
        self.write(h, &stream, bytes / self.etype(h)?.extent())
    }

    fn typed_bytes(
        &self,
        h: Handle,
        buf_len: usize,
        count: u64,
        memtype: &DatatypeTree,
    ) -> Result<u64> {
        memtype.validate()?;
        let bytes = count * memtype.size();
        if !bytes.is_multiple_of(self.etype(h)?.extent()) {
            return Err(ClientError::NotAligned);
        }
        let span = if count == 0 {
            0
        } else {
            (count - 1) * memtype.extent() + type_span(memtype)?
        };
        if (buf_len as u64) < span {
            return Err(ClientError::BufferTooSmall);
        }
        Ok(bytes)
    }

    // -- non-blocking -------------------------------------------------------

    /// Starts reading `count` etypes into `buf`, reserving the range at the
    /// position now.
    pub fn iread(&mut self, h: Handle, buf: Vec<u8>, count: u64) -> Result<Request> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.files.get(h)?.position;
        let r = self.istart_read(h, at, buf, bytes, false)?;
        self.files.get_mut(h)?.position = at + bytes;
        Ok(r)
    }

    pub fn iread_at(
        &mut self,
        h: Handle,
        offset: u64,
        buf: Vec<u8>,
        count: u64,
    ) -> Result<Request> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.bytes_of(h, offset)?;
        self.istart_read(h, at, buf, bytes, true)
    }

    fn istart_read(
        &mut self,
        h: Handle,
        at: u64,
        buf: Vec<u8>,
        bytes: u64,
        explicit: bool,
    ) -> Result<Request> {
        if (buf.len() as u64) < bytes {
            return Err(ClientError::BufferTooSmall);
        }
        let id = self.start_read(h, at, bytes, explicit)?;
        Ok(Request {
            id,
            handle: h,
            buf: Some(buf),
            scatter: None,
            result: None,
        })
    }

    pub fn iread_typed(
        &mut self,
        h: Handle,
        buf: Vec<u8>,
        count: u64,
        memtype: &DatatypeTree,
    ) -> Result<Request> {
        let bytes = self.typed_bytes(h, buf.len(), count, memtype)?;
        let at = self.files.get(h)?.position;
        let id = self.start_read(h, at, bytes, false)?;
        self.files.get_mut(h)?.position = at + bytes;
        Ok(Request {
            id,
            handle: h,
            buf: Some(buf),
            scatter: Some(memtype.clone()),
            result: None,
        })
    }

    pub fn iwrite(&mut self, h: Handle, buf: &[u8], count: u64) -> Result<Request> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.files.get(h)?.position;
        let r = self.istart_write(h, at, buf, bytes, false)?;
        self.files.get_mut(h)?.position = at + bytes;
        Ok(r)
    }

    pub fn iwrite_at(&mut self, h: Handle, offset: u64, buf: &[u8], count: u64) -> Result<Request> {
        let bytes = self.bytes_of(h, count)?;
        let at = self.bytes_of(h, offset)?;
        self.istart_write(h, at, buf, bytes, true)
    }

    fn istart_write(
        &mut self,
        h: Handle,
        at: u64,
        buf: &[u8],
        bytes: u64,
        explicit: bool,
    ) -> Result<Request> {
        let data = buf
            .get(..bytes as usize)
            .ok_or(ClientError::BufferTooSmall)?
            .to_vec();
        let id = self.start_write(h, at, data, explicit)?;
        Ok(Request {
            id,
            handle: h,
            buf: None,
            scatter: None,
            result: None,
        })
    }

    fn complete(&self, req: &mut Request) -> Result<IoStatus> {
        let r = self.finish(req.id).and_then(|(n, data)| {
            if let Some(buf) = req.buf.as_mut() {
                match &req.scatter {
                    Some(t) => scatter(t, buf, &data)?,
                    None => buf[..data.len()].copy_from_slice(&data),
                }
            }
            Ok(IoStatus {
                file_ref: req.handle as i64,
                bytes_transferred: n,
            })
        });
        req.result = Some(r.clone());
        r
    }

    /// Checks for completion without blocking. An unfinished request
    /// reports `file_ref` −1.
    pub fn test(&self, req: &mut Request) -> Result<(bool, IoStatus)> {
        if let Some(r) = &req.result {
            return r.clone().map(|s| (true, s));
        }
        if !self.conn()?.inner.is_done(req.id)? {
            return Ok((false, IoStatus::UNFINISHED));
        }
        self.complete(req).map(|s| (true, s))
    }

    pub fn wait(&self, req: &mut Request) -> Result<IoStatus> {
        if let Some(r) = &req.result {
            return r.clone();
        }
        self.complete(req)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.conn.is_some() {
            let _ = self.disconnect();
        }
    }
}

fn io_request(f: &FileState, at: u64, bytes: u64, explicit: bool) -> (u32, IoRequest) {
    let v = &f.view;
    let (view_offset, view_id) = if v.view_id == 0 {
        (v.view.disp + at, 0)
    } else {
        (at, v.view_id)
    };
    (
        f.file_id,
        IoRequest {
            view_offset,
            length: bytes,
            explicit_at: explicit,
            view_id,
        },
    )
}

fn receive(inner: Arc<Inner>, ep: Endpoint) {
    while !inner.stop.load(Ordering::Relaxed) {
        match ep.recv_timeout(Duration::from_millis(20)) {
            Ok(m) => inner.handle(m),
            Err(NetError::Timeout) | Err(NetError::Codec(_)) => {}
            Err(_) => {
                inner.fail_all(ClientError::Disconnected);
                break;
            }
        }
    }
}

/// Bytes from the start of one instance to the end of its last byte.
fn type_span(t: &DatatypeTree) -> Result<u64> {
    let (desc, _) = build_descriptor(t)?;
    let runs = desc.enumerate_runs(0, 0, t.size());
    Ok(runs.last().map_or(0, |r| r.end()))
}

/// Places a contiguous stream into `buf` following the memory type map.
pub fn scatter(memtype: &DatatypeTree, buf: &mut [u8], stream: &[u8]) -> Result<()> {
    let (desc, _) = build_descriptor(memtype)?;
    let mut at = 0usize;
    for r in desc.enumerate_runs(0, 0, stream.len() as u64) {
        let n = r.length as usize;
        let dst = buf
            .get_mut(r.file_offset as usize..r.file_offset as usize + n)
            .ok_or(ClientError::BufferTooSmall)?;
        dst.copy_from_slice(&stream[at..at + n]);
        at += n;
    }
    Ok(())
}

/// Collects `bytes` stream bytes from `buf` following the memory type map.
pub fn gather(memtype: &DatatypeTree, buf: &[u8], bytes: u64) -> Result<Vec<u8>> {
    let (desc, _) = build_descriptor(memtype)?;
    let mut out = Vec::with_capacity(bytes as usize);
    for r in desc.enumerate_runs(0, 0, bytes) {
        let src = buf
            .get(r.file_offset as usize..(r.file_offset + r.length) as usize)
            .ok_or(ClientError::BufferTooSmall)?;
        out.extend_from_slice(src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(i: u32) -> FileState {
        FileState {
            file_id: i,
            name: format!("f{i}"),
            flags: amode::RDWR,
            view: FileView {
                view: View::bytes(0),
                filetype: None,
                view_id: 0,
                is_set: false,
            },
            position: 0,
            accessed: false,
        }
    }

    #[test]
    fn handles_are_dense_and_not_reused_until_cleanup() {
        let mut t = HandleTable::new();
        assert_eq!(t.insert(state(7)), 0);
        assert_eq!(t.insert(state(8)), 1);
        t.remove(0).unwrap();
        assert_eq!(t.insert(state(9)), 2);
        assert_eq!(t.remove(0).unwrap_err(), ClientError::BadHandle);
        t.remove(1).unwrap();
        t.remove(2).unwrap();
        assert_eq!(t.n_open(), 0);
        assert_eq!(t.insert(state(1)), 0);
    }

    #[test]
    fn table_grows_by_five() {
        let mut t = HandleTable::new();
        assert_eq!(t.capacity(), 10);
        for i in 0..11 {
            assert_eq!(t.insert(state(i)), i as usize);
        }
        assert_eq!(t.capacity(), 15);
    }

    #[test]
    fn count_from_status() {
        let s = IoStatus {
            file_ref: 0,
            bytes_transferred: 80,
        };
        assert_eq!(get_count(&s, BaseType::Double), Ok(10));
        assert_eq!(
            get_count(&IoStatus::UNFINISHED, BaseType::Int),
            Err(ClientError::UnfinishedRequest)
        );
    }

    #[test]
    fn scatter_follows_memory_type() {
        // three blocks of two bytes, stride four
        let t = DatatypeTree::vector(3, 2, 4, DatatypeTree::base(BaseType::Byte));
        let mut buf = vec![0u8; 10];
        scatter(&t, &mut buf, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(buf, vec![1, 2, 0, 0, 3, 4, 0, 0, 5, 6]);
        assert_eq!(gather(&t, &buf, 6).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(type_span(&t).unwrap(), 10);
    }
}
