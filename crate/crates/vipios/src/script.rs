//! Command-file driver. One operation per line; `#` starts a comment.
//!
//! ```text
//! connect
//! open data.bin rdwr|create        # prints the handle, 0 here
//! view 0 0 int vector(3,2,5;int)
//! writeseq 0 0 12                  # etype values 0..11
//! seek 0 0 set
//! read 0 4                         # prints the values read
//! readat 0 6 2
//! write 0 -1 -2
//! writeat 0 10 7 8
//! size 0
//! setsize 0 400
//! prealloc 0 1024
//! position 0
//! close 0
//! remove data.bin
//! disconnect
//! ```
//!
//! Values are written and printed as numbers of the handle's etype.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use vipios_core::{BaseType, DatatypeTree};

use crate::amode;
use crate::client::{ClientError, Handle, Session, Whence};
use crate::config::ClusterConfig;
use crate::transport::Network;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Connect,
    Disconnect,
    Open {
        name: String,
        flags: u32,
    },
    Close(Handle),
    View {
        h: Handle,
        disp: u64,
        etype: BaseType,
        filetype: DatatypeTree,
    },
    Read {
        h: Handle,
        count: u64,
    },
    ReadAt {
        h: Handle,
        offset: u64,
        count: u64,
    },
    Write {
        h: Handle,
        values: Vec<f64>,
    },
    WriteSeq {
        h: Handle,
        start: i64,
        count: u64,
    },
    WriteAt {
        h: Handle,
        offset: u64,
        values: Vec<f64>,
    },
    Seek {
        h: Handle,
        offset: i64,
        whence: Whence,
    },
    Size(Handle),
    SetSize(Handle, u64),
    Prealloc(Handle, u64),
    Position(Handle),
    Remove(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {err}")]
    Run { line: usize, err: ClientError },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

fn num<T: std::str::FromStr>(w: Option<&str>, what: &str) -> Result<T, String> {
    let w = w.ok_or_else(|| format!("missing {what}"))?;
    w.parse().map_err(|_| format!("bad {what} `{w}`"))
}

fn values(ws: &[&str]) -> Result<Vec<f64>, String> {
    ws.iter().map(|w| num(Some(w), "value")).collect()
}

fn parse_line(text: &str) -> Result<Option<Command>, String> {
    let text = text.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let ws: Vec<&str> = text.split_whitespace().collect();
    let mut it = ws.iter().copied();
    let op = it.next().unwrap();
    let h = |w: Option<&str>| num::<Handle>(w, "handle");
    let cmd = match op {
        "connect" => Command::Connect,
        "disconnect" => Command::Disconnect,
        "open" => {
            let name = it.next().ok_or("missing file name")?.to_string();
            let flags = amode::parse(&ws[2..].join(" ")).ok_or("bad access mode")?;
            return Ok(Some(Command::Open { name, flags }));
        }
        "close" => Command::Close(h(it.next())?),
        "view" => {
            let h = h(it.next())?;
            let disp = num(it.next(), "displacement")?;
            let e = it.next().ok_or("missing etype")?;
            let etype = BaseType::from_name(e).ok_or_else(|| format!("unknown etype `{e}`"))?;
            let rest = ws.get(4..).map(|r| r.join(" ")).unwrap_or_default();
            let filetype = if rest.is_empty() {
                DatatypeTree::base(etype)
            } else {
                rest.parse().map_err(|e| format!("filetype: {e}"))?
            };
            return Ok(Some(Command::View {
                h,
                disp,
                etype,
                filetype,
            }));
        }
        "read" => Command::Read {
            h: h(it.next())?,
            count: num(it.next(), "count")?,
        },
        "readat" => Command::ReadAt {
            h: h(it.next())?,
            offset: num(it.next(), "offset")?,
            count: num(it.next(), "count")?,
        },
        "write" => {
            return Ok(Some(Command::Write {
                h: h(it.next())?,
                values: values(&ws[2.min(ws.len())..])?,
            }))
        }
        "writeseq" => Command::WriteSeq {
            h: h(it.next())?,
            start: num(it.next(), "start")?,
            count: num(it.next(), "count")?,
        },
        "writeat" => {
            return Ok(Some(Command::WriteAt {
                h: h(it.next())?,
                offset: num(it.next(), "offset")?,
                values: values(&ws[3.min(ws.len())..])?,
            }))
        }
        "seek" => {
            let h = h(it.next())?;
            let offset = num(it.next(), "offset")?;
            let whence = match it.next() {
                Some("set") | None => Whence::Set,
                Some("cur") => Whence::Cur,
                Some("end") => Whence::End,
                Some(o) => return Err(format!("bad whence `{o}`")),
            };
            Command::Seek { h, offset, whence }
        }
        "size" => Command::Size(h(it.next())?),
        "setsize" => Command::SetSize(h(it.next())?, num(it.next(), "size")?),
        "prealloc" => Command::Prealloc(h(it.next())?, num(it.next(), "size")?),
        "position" => Command::Position(h(it.next())?),
        "remove" => Command::Remove(it.next().ok_or("missing file name")?.to_string()),
        o => return Err(format!("unknown command `{o}`")),
    };
    if let Some(extra) = it.next() {
        return Err(format!("unexpected `{extra}`"));
    }
    Ok(Some(cmd))
}

/// Parses a command file into (line number, command) pairs.
pub fn parse(text: &str) -> Result<Vec<(usize, Command)>, ScriptError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        match parse_line(l) {
            Ok(Some(c)) => out.push((i + 1, c)),
            Ok(None) => {}
            Err(msg) => return Err(ScriptError::Parse { line: i + 1, msg }),
        }
    }
    Ok(out)
}

/// Encodes a number as one element of `etype`.
pub fn encode_value(etype: BaseType, v: f64, out: &mut Vec<u8>) {
    match etype {
        BaseType::Byte | BaseType::Char => out.push(v as i64 as u8),
        BaseType::Short => out.extend((v as i16).to_le_bytes()),
        BaseType::UShort => out.extend((v as u16).to_le_bytes()),
        BaseType::Int => out.extend((v as i32).to_le_bytes()),
        BaseType::UInt => out.extend((v as u32).to_le_bytes()),
        BaseType::Long => out.extend((v as i64).to_le_bytes()),
        BaseType::ULong => out.extend((v as u64).to_le_bytes()),
        BaseType::Float => out.extend((v as f32).to_le_bytes()),
        BaseType::Double => out.extend(v.to_le_bytes()),
    }
}

/// Formats the elements of `etype` in `bytes`, separated by spaces.
pub fn format_values(etype: BaseType, bytes: &[u8]) -> String {
    let mut s = String::new();
    for c in bytes.chunks_exact(etype.extent() as usize) {
        if !s.is_empty() {
            s.push(' ');
        }
        let _ = match etype {
            BaseType::Byte => write!(s, "{}", c[0]),
            BaseType::Char => write!(s, "{}", c[0] as i8),
            BaseType::Short => write!(s, "{}", i16::from_le_bytes(c.try_into().unwrap())),
            BaseType::UShort => write!(s, "{}", u16::from_le_bytes(c.try_into().unwrap())),
            BaseType::Int => write!(s, "{}", i32::from_le_bytes(c.try_into().unwrap())),
            BaseType::UInt => write!(s, "{}", u32::from_le_bytes(c.try_into().unwrap())),
            BaseType::Long => write!(s, "{}", i64::from_le_bytes(c.try_into().unwrap())),
            BaseType::ULong => write!(s, "{}", u64::from_le_bytes(c.try_into().unwrap())),
            BaseType::Float => write!(s, "{}", f32::from_le_bytes(c.try_into().unwrap())),
            BaseType::Double => write!(s, "{}", f64::from_le_bytes(c.try_into().unwrap())),
        };
    }
    s
}

/// Executes commands against one session, printing results to `out`.
pub struct Driver {
    session: Session,
}

impl Driver {
    pub fn new(net: Arc<dyn Network>, cfg: Arc<ClusterConfig>) -> Driver {
        Driver {
            session: Session::new(net, cfg),
        }
    }

    /// Runs `cmds`, stopping at the first failure.
    pub fn run(
        &mut self,
        cmds: &[(usize, Command)],
        out: &mut dyn Write,
    ) -> Result<(), ScriptError> {
        for (line, c) in cmds {
            self.step(c, out).map_err(|e| match e {
                StepError::Client(err) => ScriptError::Run { line: *line, err },
                StepError::Io(e) => ScriptError::Io(e),
            })?;
        }
        Ok(())
    }

    fn etype(&self, h: Handle) -> Result<BaseType, ClientError> {
        Ok(self.session.file_state(h)?.view.view.etype)
    }

    fn step(&mut self, c: &Command, out: &mut dyn Write) -> Result<(), StepError> {
        let s = &mut self.session;
        match c {
            Command::Connect => s.connect(0)?,
            Command::Disconnect => s.disconnect()?,
            Command::Open { name, flags } => {
                let h = s.open(name, *flags)?;
                writeln!(out, "{h}")?;
            }
            Command::Close(h) => s.close(*h)?,
            Command::View {
                h,
                disp,
                etype,
                filetype,
            } => s.set_view(*h, *disp, *etype, filetype, "native")?,
            Command::Read { h, count } | Command::ReadAt { h, count, .. } => {
                let e = self.etype(*h)?;
                let s = &mut self.session;
                let mut buf = vec![0u8; (count * e.extent()) as usize];
                let st = match c {
                    Command::ReadAt { offset, .. } => s.read_at(*h, *offset, &mut buf, *count)?,
                    _ => s.read(*h, &mut buf, *count)?,
                };
                writeln!(
                    out,
                    "{}",
                    format_values(e, &buf[..st.bytes_transferred as usize])
                )?;
            }
            Command::Write { h, values } | Command::WriteAt { h, values, .. } => {
                let e = self.etype(*h)?;
                let s = &mut self.session;
                let mut buf = Vec::new();
                for v in values {
                    encode_value(e, *v, &mut buf);
                }
                let n = values.len() as u64;
                match c {
                    Command::WriteAt { offset, .. } => s.write_at(*h, *offset, &buf, n)?,
                    _ => s.write(*h, &buf, n)?,
                };
            }
            Command::WriteSeq { h, start, count } => {
                let e = self.etype(*h)?;
                let mut buf = Vec::new();
                for i in 0..*count as i64 {
                    encode_value(e, (start + i) as f64, &mut buf);
                }
                self.session.write(*h, &buf, *count)?;
            }
            Command::Seek { h, offset, whence } => {
                s.seek(*h, *offset, *whence)?;
            }
            Command::Size(h) => writeln!(out, "{}", s.get_size(*h)?)?,
            Command::SetSize(h, n) => s.set_size(*h, *n)?,
            Command::Prealloc(h, n) => s.preallocate(*h, *n)?,
            Command::Position(h) => writeln!(out, "{}", s.get_position(*h)?)?,
            Command::Remove(name) => s.remove(name)?,
        }
        Ok(())
    }
}

enum StepError {
    Client(ClientError),
    Io(std::io::Error),
}

impl From<ClientError> for StepError {
    fn from(e: ClientError) -> Self {
        StepError::Client(e)
    }
}

impl From<std::io::Error> for StepError {
    fn from(e: std::io::Error) -> Self {
        StepError::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        let text = "connect\nopen a rdwr|create # new\nview 0 4 int vector(3, 2, 5; int)\n\
                    writeseq 0 0 12\nwrite 0 1 2\nwriteat 0 3 9\nread 0 2\nreadat 0 1 1\n\
                    seek 0 -1 cur\nsize 0\nsetsize 0 10\nprealloc 0 20\nposition 0\nclose 0\nremove a\ndisconnect\n";
        let cmds = parse(text).unwrap();
        assert_eq!(cmds.len(), 16);
        assert_eq!(
            cmds[1],
            (
                2,
                Command::Open {
                    name: "a".into(),
                    flags: amode::RDWR | amode::CREATE
                }
            )
        );
        match &cmds[2].1 {
            Command::View {
                disp,
                etype,
                filetype,
                ..
            } => {
                assert_eq!((*disp, *etype), (4, BaseType::Int));
                assert_eq!(
                    *filetype,
                    DatatypeTree::vector(3, 2, 5, DatatypeTree::base(BaseType::Int))
                );
            }
            c => panic!("{c:?}"),
        }
        assert_eq!(
            cmds[8].1,
            Command::Seek {
                h: 0,
                offset: -1,
                whence: Whence::Cur
            }
        );
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(
            parse("connect\nfly 0"),
            Err(ScriptError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("read 0"),
            Err(ScriptError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("close 0 1"),
            Err(ScriptError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("open a rdwr|sideways"),
            Err(ScriptError::Parse { .. })
        ));
    }

    #[test]
    fn values_round_trip() {
        for e in BaseType::ALL {
            let mut b = Vec::new();
            for v in [0.0, 1.0, 100.0] {
                encode_value(e, v, &mut b);
            }
            assert_eq!(format_values(e, &b), "0 1 100");
        }
        let mut b = Vec::new();
        encode_value(BaseType::Int, -7.0, &mut b);
        assert_eq!(format_values(BaseType::Int, &b), "-7");
    }
}
