//! Cluster configuration files.
//!
//! ```text
//! # comment
//! server <id> <addr> buffer=<bytes> disks=<path:lat_ms_per_mib[:capacity]>[,...] [sc] [cc]
//! option inline_threshold=<bytes>
//! option stripe=<bytes>
//! option broadcast=on|off
//! ```
//!
//! Byte quantities accept a `K`, `M` or `G` suffix (powers of 1024).
//! Relative disk paths are resolved against the config file's directory.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use crate::transport::{NodeId, CLIENT_BASE};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskConfig {
    pub path: PathBuf,
    pub latency_ms_per_mib: f64,
    /// Informational; portions are not checked against it.
    pub capacity: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub id: NodeId,
    pub addr: String,
    pub buffer: u64,
    pub disks: Vec<DiskConfig>,
    pub sc: bool,
    pub cc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub servers: Vec<ServerConfig>,
    pub inline_threshold: u64,
    pub stripe: u64,
    pub broadcast: bool,
}

pub const DEFAULT_INLINE_THRESHOLD: u64 = 64 * 1024;
pub const DEFAULT_STRIPE: u64 = 64 * 1024;

pub fn parse_bytes(s: &str) -> Option<u64> {
    let (num, mul) = match s.as_bytes().last()? {
        b'K' | b'k' => (&s[..s.len() - 1], 1u64 << 10),
        b'M' | b'm' => (&s[..s.len() - 1], 1 << 20),
        b'G' | b'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    num.parse::<u64>().ok()?.checked_mul(mul)
}

impl ClusterConfig {
    pub fn load(path: &Path) -> Result<ClusterConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ClusterConfig::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<ClusterConfig, ConfigError> {
        let mut cfg = ClusterConfig {
            servers: Vec::new(),
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
            stripe: DEFAULT_STRIPE,
            broadcast: true,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ConfigError::Syntax { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "server" => cfg
                    .servers
                    .push(parse_server(&words[1..], base).map_err(err)?),
                "option" => {
                    for w in &words[1..] {
                        let (k, v) = w
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got `{w}`")))?;
                        match k {
                            "inline_threshold" => {
                                cfg.inline_threshold = parse_bytes(v)
                                    .ok_or_else(|| err(format!("bad byte count `{v}`")))?
                            }
                            "stripe" => {
                                cfg.stripe = parse_bytes(v)
                                    .ok_or_else(|| err(format!("bad byte count `{v}`")))?
                            }
                            "broadcast" => {
                                cfg.broadcast = match v {
                                    "on" | "true" => true,
                                    "off" | "false" => false,
                                    _ => {
                                        return Err(err(format!(
                                            "broadcast must be on or off, got `{v}`"
                                        )))
                                    }
                                }
                            }
                            _ => return Err(err(format!("unknown option `{k}`"))),
                        }
                    }
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.servers.is_empty() {
            return bad("no servers configured");
        }
        let mut seen = HashMap::new();
        for s in &self.servers {
            if seen.insert(s.id, ()).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "duplicate server id {}",
                    s.id
                )));
            }
            if s.id >= CLIENT_BASE {
                return Err(ConfigError::Invalid(format!(
                    "server id {} too large",
                    s.id
                )));
            }
            if s.disks.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "server {} has no disks",
                    s.id
                )));
            }
            if s.buffer == 0 {
                return Err(ConfigError::Invalid(format!(
                    "server {} has a zero buffer",
                    s.id
                )));
            }
        }
        if self.servers.iter().filter(|s| s.sc).count() > 1
            || self.servers.iter().filter(|s| s.cc).count() > 1
        {
            return bad("at most one server may be sc and one cc");
        }
        if self.inline_threshold == 0 || self.stripe == 0 {
            return bad("inline_threshold and stripe must be positive");
        }
        Ok(())
    }

    /// The system controller; the first server when none is flagged.
    pub fn controller(&self) -> NodeId {
        self.servers
            .iter()
            .find(|s| s.sc)
            .unwrap_or(&self.servers[0])
            .id
    }

    /// The connection controller; defaults to the system controller.
    pub fn connection_controller(&self) -> NodeId {
        self.servers
            .iter()
            .find(|s| s.cc)
            .map_or_else(|| self.controller(), |s| s.id)
    }

    pub fn server(&self, id: NodeId) -> Option<&ServerConfig> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn server_ids(&self) -> Vec<NodeId> {
        self.servers.iter().map(|s| s.id).collect()
    }

    /// The first `k` servers. Controller duties move to the first of them
    /// when the configured controllers are cut off.
    pub fn first(&self, k: usize) -> ClusterConfig {
        let mut c = self.clone();
        c.servers.truncate(k.max(1));
        if !c.servers.iter().any(|s| s.sc) {
            c.servers[0].sc = true;
        }
        if !c.servers.iter().any(|s| s.cc) {
            let sc = c.controller();
            c.servers.iter_mut().find(|s| s.id == sc).unwrap().cc = true;
        }
        c
    }

    pub fn socket_addrs(&self) -> Result<HashMap<NodeId, SocketAddr>, ConfigError> {
        use std::net::ToSocketAddrs;
        self.servers
            .iter()
            .map(|s| {
                let a = s
                    .addr
                    .to_socket_addrs()
                    .ok()
                    .and_then(|mut it| it.next())
                    .ok_or_else(|| {
                        ConfigError::Invalid(format!("server {}: bad address `{}`", s.id, s.addr))
                    })?;
                Ok((s.id, a))
            })
            .collect()
    }

    /// A cluster of `n` servers with one disk each under `root`, all
    /// addresses on localhost starting at `port`.
    pub fn local(
        n: u32,
        root: &Path,
        buffer: u64,
        latency_ms_per_mib: f64,
        port: u16,
    ) -> ClusterConfig {
        ClusterConfig {
            servers: (0..n)
                .map(|i| ServerConfig {
                    id: i,
                    addr: format!("127.0.0.1:{}", port as u32 + i),
                    buffer,
                    disks: vec![DiskConfig {
                        path: root.join(format!("s{i}d0")),
                        latency_ms_per_mib,
                        capacity: None,
                    }],
                    sc: i == 0,
                    cc: i == 0,
                })
                .collect(),
            inline_threshold: DEFAULT_INLINE_THRESHOLD,
            stripe: DEFAULT_STRIPE,
            broadcast: true,
        }
    }
}

fn parse_server(words: &[&str], base: &Path) -> Result<ServerConfig, String> {
    if words.len() < 2 {
        return Err("server needs an id and an address".into());
    }
    let id = words[0]
        .parse::<NodeId>()
        .map_err(|_| format!("bad server id `{}`", words[0]))?;
    let mut s = ServerConfig {
        id,
        addr: words[1].to_string(),
        buffer: 0,
        disks: Vec::new(),
        sc: false,
        cc: false,
    };
    for w in &words[2..] {
        match *w {
            "sc" => s.sc = true,
            "cc" => s.cc = true,
            _ => {
                let (k, v) = w
                    .split_once('=')
                    .ok_or_else(|| format!("unexpected `{w}`"))?;
                match k {
                    "buffer" => {
                        s.buffer = parse_bytes(v).ok_or_else(|| format!("bad buffer size `{v}`"))?
                    }
                    "disks" => {
                        for d in v.split(',') {
                            s.disks.push(parse_disk(d, base)?);
                        }
                    }
                    _ => return Err(format!("unknown server field `{k}`")),
                }
            }
        }
    }
    if s.buffer == 0 {
        return Err("server needs buffer=<bytes>".into());
    }
    if s.disks.is_empty() {
        return Err("server needs disks=<path:latency>".into());
    }
    Ok(s)
}

fn parse_disk(d: &str, base: &Path) -> Result<DiskConfig, String> {
    let parts: Vec<&str> = d.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 || parts[0].is_empty() {
        return Err(format!("disk `{d}` is not path:latency[:capacity]"));
    }
    let latency_ms_per_mib = parts[1]
        .parse::<f64>()
        .ok()
        .filter(|l| *l >= 0.0 && l.is_finite())
        .ok_or_else(|| format!("bad disk latency `{}`", parts[1]))?;
    let capacity = match parts.get(2) {
        Some(c) => Some(parse_bytes(c).ok_or_else(|| format!("bad disk capacity `{c}`"))?),
        None => None,
    };
    let p = PathBuf::from(parts[0]);
    Ok(DiskConfig {
        path: if p.is_absolute() { p } else { base.join(p) },
        latency_ms_per_mib,
        capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_servers_and_options() {
        let text = "\
# two servers
server 0 127.0.0.1:7000 buffer=1M disks=d0:0,d0b:100:1G sc cc
server 1 127.0.0.1:7001 buffer=8192 disks=/tmp/x:2.5
option inline_threshold=4K stripe=128 broadcast=off
";
        let c = ClusterConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.servers.len(), 2);
        assert_eq!(c.servers[0].buffer, 1 << 20);
        assert_eq!(c.servers[0].disks[0].path, PathBuf::from("/base/d0"));
        assert_eq!(c.servers[0].disks[1].capacity, Some(1 << 30));
        assert_eq!(c.servers[1].disks[0].latency_ms_per_mib, 2.5);
        assert_eq!(
            (c.inline_threshold, c.stripe, c.broadcast),
            (4096, 128, false)
        );
        assert_eq!(c.controller(), 0);
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let text = "server 0 a:1 buffer=1 disks=d:0\nserver 0 a:2 buffer=1 disks=d:0\n";
        assert!(matches!(
            ClusterConfig::parse(text, Path::new(".")),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let text = "server 0 a:1 buffer=1 disks=d:0\nbogus\n";
        assert!(matches!(
            ClusterConfig::parse(text, Path::new(".")),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        let text = "server 0 a:1 buffer=1 disks=d\n";
        assert!(matches!(
            ClusterConfig::parse(text, Path::new(".")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn subset_moves_controller() {
        let mut c = ClusterConfig::local(4, Path::new("/t"), 1024, 0.0, 7000);
        c.servers[0].sc = false;
        c.servers[0].cc = false;
        c.servers[3].sc = true;
        let s = c.first(2);
        assert_eq!(s.servers.len(), 2);
        assert_eq!(s.controller(), 0);
        assert_eq!(s.connection_controller(), 0);
    }
}
