//! Wire messages.
//!
//! Every message is a 44-byte header followed by `param_len` bytes of
//! type-specific parameters and `data_len` bytes of raw data. Header fields
//! are little-endian 32-bit values after the 4-byte magic `VIP1`:
//!
//! | offset | field        |
//! |--------|--------------|
//! | 0      | magic        |
//! | 4      | msg_type     |
//! | 8      | msg_class    |
//! | 12     | sender_id    |
//! | 16     | recipient_id |
//! | 20     | client_id    |
//! | 24     | file_id      |
//! | 28     | request_id   |
//! | 32     | status (i32) |
//! | 36     | param_len    |
//! | 40     | data_len     |
//!
//! The parameter layouts of each message type live in [`params`].

use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"VIP1";
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated message")]
    Truncated,
    #[error("unknown message type or class code {0}")]
    UnknownType(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgType {
    Connect = 1,
    Disconnect = 2,
    Open = 3,
    Close = 4,
    Read = 5,
    Write = 6,
    Seek = 7,
    Remove = 8,
    SetSize = 9,
    GetSize = 10,
    SetView = 11,
    Hint = 12,
    Admin = 13,
    Shutdown = 14,
    Ack = 15,
    Data = 16,
}

impl MsgType {
    pub const ALL: [MsgType; 16] = [
        MsgType::Connect,
        MsgType::Disconnect,
        MsgType::Open,
        MsgType::Close,
        MsgType::Read,
        MsgType::Write,
        MsgType::Seek,
        MsgType::Remove,
        MsgType::SetSize,
        MsgType::GetSize,
        MsgType::SetView,
        MsgType::Hint,
        MsgType::Admin,
        MsgType::Shutdown,
        MsgType::Ack,
        MsgType::Data,
    ];

    pub fn from_code(c: u32) -> Option<MsgType> {
        if (1..=16).contains(&c) {
            Some(MsgType::ALL[c as usize - 1])
        } else {
            None
        }
    }

    pub const fn code(self) -> u32 {
        self as u32
    }
}

/// External request, directed internal, broadcast internal, acknowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgClass {
    Er = 0,
    Di = 1,
    Bi = 2,
    Ack = 3,
}

impl MsgClass {
    pub const ALL: [MsgClass; 4] = [MsgClass::Er, MsgClass::Di, MsgClass::Bi, MsgClass::Ack];

    pub fn from_code(c: u32) -> Option<MsgClass> {
        MsgClass::ALL.get(c as usize).copied()
    }

    pub const fn code(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MsgType,
    pub class: MsgClass,
    pub sender: u32,
    pub recipient: u32,
    pub client: u32,
    pub file: u32,
    pub request: u32,
    pub status: i32,
    pub params: Vec<u8>,
    pub data: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MsgType, class: MsgClass) -> Self {
        Message {
            msg_type,
            class,
            sender: 0,
            recipient: 0,
            client: 0,
            file: 0,
            request: 0,
            status: 0,
            params: Vec::new(),
            data: Vec::new(),
        }
    }

    /// An acknowledgement of `self` keeping its type and id triple, sent
    /// from `sender` back to the client.
    pub fn ack(&self, sender: u32) -> Message {
        Message {
            msg_type: self.msg_type,
            class: MsgClass::Ack,
            sender,
            recipient: self.client,
            client: self.client,
            file: self.file,
            request: self.request,
            status: 0,
            params: Vec::new(),
            data: Vec::new(),
        }
    }

    /// True for acknowledgements other than raw data messages.
    pub fn is_ack(&self) -> bool {
        self.class == MsgClass::Ack && self.msg_type != MsgType::Data
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.params.len() + self.data.len()
    }

    /// Serializes the message.
    ///
    /// # Panics
    ///
    /// If the parameter or data region exceeds `u32::MAX` bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let plen = u32::try_from(self.params.len()).expect("params exceed 32-bit length");
        let dlen = u32::try_from(self.data.len()).expect("data exceeds 32-bit length");
        out.extend_from_slice(&MAGIC);
        for v in [
            self.msg_type.code(),
            self.class.code(),
            self.sender,
            self.recipient,
            self.client,
            self.file,
            self.request,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.status.to_le_bytes());
        out.extend_from_slice(&plen.to_le_bytes());
        out.extend_from_slice(&dlen.to_le_bytes());
        out.extend_from_slice(&self.params);
        out.extend_from_slice(&self.data);
    }

    /// Decodes the message at the front of `buf`; trailing bytes are ignored.
    pub fn decode(buf: &[u8]) -> Result<Message, CodecError> {
        Self::decode_prefix(buf).map(|(m, _)| m)
    }

    /// Decodes the message at the front of `buf` and returns the number of
    /// bytes it occupies.
    pub fn decode_prefix(buf: &[u8]) -> Result<(Message, usize), CodecError> {
        let total = frame_len(buf)?;
        let word = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
        let msg_type = MsgType::from_code(word(4)).ok_or(CodecError::UnknownType(word(4)))?;
        let class = MsgClass::from_code(word(8)).ok_or(CodecError::UnknownType(word(8)))?;
        let plen = word(36) as usize;
        let msg = Message {
            msg_type,
            class,
            sender: word(12),
            recipient: word(16),
            client: word(20),
            file: word(24),
            request: word(28),
            status: word(32) as i32,
            params: buf[HEADER_LEN..HEADER_LEN + plen].to_vec(),
            data: buf[HEADER_LEN + plen..total].to_vec(),
        };
        Ok((msg, total))
    }
}

/// Total frame length announced by the header at the front of `buf`,
/// checking magic, codes and that the whole frame is present.
pub fn frame_len(buf: &[u8]) -> Result<usize, CodecError> {
    let n = buf.len().min(4);
    if buf[..n] != MAGIC[..n] {
        return Err(CodecError::BadMagic);
    }
    if buf.len() < HEADER_LEN {
        return Err(CodecError::Truncated);
    }
    let word = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
    if MsgType::from_code(word(4)).is_none() {
        return Err(CodecError::UnknownType(word(4)));
    }
    if MsgClass::from_code(word(8)).is_none() {
        return Err(CodecError::UnknownType(word(8)));
    }
    let total = HEADER_LEN as u64 + u64::from(word(36)) + u64::from(word(40));
    if (buf.len() as u64) < total {
        return Err(CodecError::Truncated);
    }
    Ok(total as usize)
}

/// How request data travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transmission {
    /// Data rides in the request or acknowledge itself.
    Inline,
    /// Data follows in separate DATA messages.
    SeparateData,
}

pub fn choose_transmission(data_len: u64, threshold: u64) -> Transmission {
    if data_len <= threshold {
        Transmission::Inline
    } else {
        Transmission::SeparateData
    }
}

/// Negative status codes carried in acknowledgements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    IoFailure = -1,
    NoSuchFile = -2,
    Exists = -3,
    ModeConflict = -4,
    NotController = -5,
    UnknownFile = -6,
    BadRequest = -7,
    Refused = -8,
    ShuttingDown = -9,
    NotWritable = -10,
    NotReadable = -11,
    InvalidHint = -12,
}

impl Status {
    pub const ALL: [Status; 12] = [
        Status::IoFailure,
        Status::NoSuchFile,
        Status::Exists,
        Status::ModeConflict,
        Status::NotController,
        Status::UnknownFile,
        Status::BadRequest,
        Status::Refused,
        Status::ShuttingDown,
        Status::NotWritable,
        Status::NotReadable,
        Status::InvalidHint,
    ];

    pub fn from_code(c: i32) -> Option<Status> {
        Status::ALL.iter().copied().find(|s| *s as i32 == c)
    }

    pub const fn code(self) -> i32 {
        self as i32
    }
}

pub mod params {
    //! Parameter layouts. All integers are little-endian; strings and byte
    //! blobs are a `u32` length followed by the bytes.
    //!
    //! | message | parameters |
    //! |---|---|
    //! | CONNECT ack | buddy `u32`, controller `u32`, server count `u32` |
    //! | OPEN | flags `u32`, name, hint blob (empty for none) |
    //! | OPEN ack | file size `u64` |
    //! | CLOSE | view ids: count `u32`, ids `u32` |
    //! | READ, WRITE (external) | view offset `u64`, length `u64`, flags `u64`, view id `u32` |
    //! | READ, WRITE (internal) | method `u8`, file end `u64`, segment list |
    //! | READ, WRITE ack | [`TransferAck`] |
    //! | SET_VIEW | view id `u32`, disp `u64`, etype code `u32`, descriptor blob |
    //! | SET_SIZE | size `u64`, mode `u8` (0 set, 1 grow only) |
    //! | GET_SIZE ack | size `u64` |
    //! | REMOVE | name |
    //! | HINT | kind `u8`, payload blob |
    //! | ADMIN | op `u8`, op-specific fields |
    //!
    //! A segment list is a count `u32` followed by `(file offset, length,
    //! stream offset)` triples of `u64`.

    use alloc::string::String;
    use alloc::vec::Vec;

    use crate::layout::{decode_segments, encode_segments, Segment};

    #[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
    #[error("malformed parameters")]
    pub struct ParamError;

    #[derive(Default)]
    pub struct Writer {
        pub buf: Vec<u8>,
    }

    impl Writer {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn u8(mut self, v: u8) -> Self {
            self.buf.push(v);
            self
        }

        pub fn u32(mut self, v: u32) -> Self {
            self.buf.extend_from_slice(&v.to_le_bytes());
            self
        }

        pub fn u64(mut self, v: u64) -> Self {
            self.buf.extend_from_slice(&v.to_le_bytes());
            self
        }

        pub fn bytes(mut self, v: &[u8]) -> Self {
            self = self.u32(v.len() as u32);
            self.buf.extend_from_slice(v);
            self
        }

        pub fn str(self, s: &str) -> Self {
            self.bytes(s.as_bytes())
        }

        pub fn segments(mut self, segs: &[Segment]) -> Self {
            encode_segments(segs, &mut self.buf);
            self
        }

        pub fn finish(self) -> Vec<u8> {
            self.buf
        }
    }

    pub struct Reader<'a> {
        buf: &'a [u8],
        pub pos: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Reader { buf, pos: 0 }
        }

        fn take(&mut self, n: usize) -> Result<&'a [u8], ParamError> {
            let s = self
                .buf
                .get(self.pos..self.pos.checked_add(n).ok_or(ParamError)?)
                .ok_or(ParamError)?;
            self.pos += n;
            Ok(s)
        }

        pub fn u8(&mut self) -> Result<u8, ParamError> {
            Ok(self.take(1)?[0])
        }

        pub fn u32(&mut self) -> Result<u32, ParamError> {
            let b = self.take(4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }

        pub fn u64(&mut self) -> Result<u64, ParamError> {
            let b = self.take(8)?;
            let mut a = [0u8; 8];
            a.copy_from_slice(b);
            Ok(u64::from_le_bytes(a))
        }

        pub fn bytes(&mut self) -> Result<&'a [u8], ParamError> {
            let n = self.u32()? as usize;
            self.take(n)
        }

        pub fn str(&mut self) -> Result<String, ParamError> {
            let b = self.bytes()?;
            core::str::from_utf8(b)
                .map(String::from)
                .map_err(|_| ParamError)
        }

        pub fn segments(&mut self) -> Result<Vec<Segment>, ParamError> {
            let mut pos = self.pos;
            let s = decode_segments(self.buf, &mut pos).map_err(|_| ParamError)?;
            self.pos = pos;
            Ok(s)
        }

        pub fn rest(&self) -> &'a [u8] {
            &self.buf[self.pos..]
        }
    }

    /// Parameters of an external READ or WRITE.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct IoRequest {
        pub view_offset: u64,
        pub length: u64,
        /// The call was an explicit-offset variant.
        pub explicit_at: bool,
        /// View registered with SET_VIEW; 0 is the plain byte view.
        pub view_id: u32,
    }

    impl IoRequest {
        const EXPLICIT_AT: u64 = 1;

        pub fn encode(&self) -> Vec<u8> {
            Writer::new()
                .u64(self.view_offset)
                .u64(self.length)
                .u64(if self.explicit_at {
                    Self::EXPLICIT_AT
                } else {
                    0
                })
                .u32(self.view_id)
                .finish()
        }

        pub fn decode(buf: &[u8]) -> Result<Self, ParamError> {
            let mut r = Reader::new(buf);
            Ok(IoRequest {
                view_offset: r.u64()?,
                length: r.u64()?,
                explicit_at: r.u64()? & Self::EXPLICIT_AT != 0,
                view_id: r.u32()?,
            })
        }
    }

    /// Parameters of an internal READ or WRITE sub-request.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct SubRequest {
        pub separate_data: bool,
        /// File size once the request completes.
        pub file_end: u64,
        pub segments: Vec<Segment>,
    }

    impl SubRequest {
        pub fn encode(&self) -> Vec<u8> {
            Writer::new()
                .u8(u8::from(self.separate_data))
                .u64(self.file_end)
                .segments(&self.segments)
                .finish()
        }

        pub fn decode(buf: &[u8]) -> Result<Self, ParamError> {
            let mut r = Reader::new(buf);
            let separate_data = match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(ParamError),
            };
            Ok(SubRequest {
                separate_data,
                file_end: r.u64()?,
                segments: r.segments()?,
            })
        }
    }

    /// Acknowledgement of (part of) a transfer.
    #[derive(Debug, Clone, PartialEq, Eq, Default)]
    pub struct TransferAck {
        pub flags: u8,
        /// Total bytes of the request; valid with [`TransferAck::SUMMARY`].
        pub total: u64,
        /// Bytes this acknowledgement accounts for.
        pub done: u64,
        /// For reads, the stream segments of the accompanying data; for
        /// [`TransferAck::WANT_DATA`], the segments requested from the client.
        pub segments: Vec<Segment>,
    }

    impl TransferAck {
        /// Last acknowledgement from this server for the request.
        pub const FINAL: u8 = 1;
        /// Sent by the buddy; `total` is valid.
        pub const SUMMARY: u8 = 2;
        /// Asks the client to send the listed segments as DATA.
        pub const WANT_DATA: u8 = 4;
        /// The listed segments follow in a DATA message; otherwise they
        /// ride in this acknowledgement's data region.
        pub const DATA_FOLLOWS: u8 = 8;

        pub fn has(&self, flag: u8) -> bool {
            self.flags & flag != 0
        }

        pub fn encode(&self) -> Vec<u8> {
            Writer::new()
                .u8(self.flags)
                .u64(self.total)
                .u64(self.done)
                .segments(&self.segments)
                .finish()
        }

        pub fn decode(buf: &[u8]) -> Result<Self, ParamError> {
            let mut r = Reader::new(buf);
            Ok(TransferAck {
                flags: r.u8()?,
                total: r.u64()?,
                done: r.u64()?,
                segments: r.segments()?,
            })
        }
    }
}
