//! Benchmark harness: clients read (or write) disjoint parts of a file,
//! optionally synchronized by barriers, over clusters of several sizes.
//!
//! A spec is JSON:
//!
//! ```json
//! {"file_size": 8388608, "clients": 4, "servers": [1, 2, 4],
//!  "pattern": "contiguous", "iterations": 5, "rotate_files": 2,
//!  "barrier_sync": true, "op": "read", "buffer": 65536,
//!  "latency_ms_per_mib": 100.0, "layout_hint": false}
//! ```
//!
//! `pattern` is `"contiguous"`, `{"view": "<datatype text>"}` (where
//! `$rank` is replaced by the client's rank) or `{"distribution": <runtime
//! descriptor>}`.

use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vipios_core::distribution::build_process_view;
use vipios_core::protocol::{MsgClass, MsgType};
use vipios_core::{BaseType, DatatypeTree};

use crate::amode;
use crate::client::{ClientError, Session};
use crate::cluster::{Cluster, ClusterError};
use crate::config::ClusterConfig;
use crate::hints::{DescriptorSpec, FileAdmin, Hint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    #[default]
    Read,
    Write,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    #[default]
    Contiguous,
    View(String),
    Distribution(DescriptorSpec),
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

fn single() -> Vec<u32> {
    vec![1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub file_size: u64,
    pub clients: u32,
    /// Server counts to run, each on the first servers of the config.
    #[serde(default = "single")]
    pub servers: Vec<u32>,
    #[serde(default)]
    pub pattern: Pattern,
    #[serde(default = "one")]
    pub iterations: u32,
    #[serde(default = "one")]
    pub rotate_files: u32,
    #[serde(default = "yes")]
    pub barrier_sync: bool,
    #[serde(default)]
    pub op: Op,
    /// Overrides every server's buffer capacity.
    #[serde(default)]
    pub buffer: Option<u64>,
    /// Overrides every disk's synthetic latency.
    #[serde(default)]
    pub latency_ms_per_mib: Option<f64>,
    /// Create the files with a layout hint matching the pattern.
    #[serde(default)]
    pub layout_hint: bool,
}

/// One CSV row: timings in seconds over the iterations, message counts
/// and bytes per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub clients: u32,
    pub servers: u32,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub variance: f64,
    pub acks: u64,
    pub datas: u64,
    pub bytes: u64,
}

pub const CSV_HEADER: &str = "clients,servers,max,min,mean,variance,acks,datas,bytes";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("infeasible workload: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for BenchError {
    fn from(e: serde_json::Error) -> Self {
        BenchError::Infeasible(format!("bad spec: {e}"))
    }
}

impl BenchSpec {
    pub fn from_json(text: &str) -> Result<BenchSpec, BenchError> {
        let s: BenchSpec = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Infeasible(m.to_string()));
        if self.iterations == 0
            || self.rotate_files == 0
            || self.clients == 0
            || self.servers.is_empty()
        {
            return bad("iterations, rotate_files, clients and servers must be positive");
        }
        if self.servers.contains(&0) {
            return bad("server counts must be positive");
        }
        match &self.pattern {
            Pattern::Contiguous | Pattern::View(_) => {
                if self.file_size < self.clients as u64
                    || !self.file_size.is_multiple_of(self.clients as u64)
                {
                    return bad("file size must be a positive multiple of the client count");
                }
            }
            Pattern::Distribution(d) => {
                let rd = d.resolve().map_err(BenchError::Infeasible)?;
                if rd.num_procs() != self.clients as u64 {
                    return bad("the distribution's process count must equal the client count");
                }
            }
        }
        Ok(())
    }
}

/// What one client transfers.
#[derive(Clone)]
enum Part {
    Bytes {
        offset: u64,
        len: u64,
    },
    View {
        etype: BaseType,
        filetype: DatatypeTree,
        len: u64,
    },
    Desc {
        etype: BaseType,
        desc: vipios_core::AccessDesc,
        len: u64,
    },
}

impl Part {
    fn len(&self) -> u64 {
        match self {
            Part::Bytes { len, .. } | Part::View { len, .. } | Part::Desc { len, .. } => *len,
        }
    }
}

fn parts(spec: &BenchSpec) -> Result<(u64, Vec<Part>, Option<Hint>), BenchError> {
    let c = spec.clients as u64;
    let each = spec.file_size / c;
    match &spec.pattern {
        Pattern::Contiguous => Ok((
            spec.file_size,
            (0..c)
                .map(|r| Part::Bytes {
                    offset: r * each,
                    len: each,
                })
                .collect(),
            None,
        )),
        Pattern::View(text) => {
            let mut out = Vec::new();
            for r in 0..c {
                let t: DatatypeTree = text
                    .replace("$rank", &r.to_string())
                    .parse()
                    .map_err(|e| BenchError::Infeasible(format!("view: {e}")))?;
                let etype = t
                    .uniform_element_type()
                    .map_err(|e| BenchError::Infeasible(e.to_string()))?;
                if !each.is_multiple_of(etype.extent()) {
                    return Err(BenchError::Infeasible(
                        "part size is not a multiple of the etype".into(),
                    ));
                }
                out.push(Part::View {
                    etype,
                    filetype: t,
                    len: each,
                });
            }
            Ok((spec.file_size, out, None))
        }
        Pattern::Distribution(d) => {
            let rd = d.resolve().map_err(BenchError::Infeasible)?;
            let etype = BaseType::from_code(rd.elem_type_code)
                .filter(|b| b.extent() == rd.elem_size)
                .unwrap_or(BaseType::Byte);
            let mut out = Vec::new();
            for r in 0..c {
                let pv = build_process_view(&rd, r)
                    .map_err(|e| BenchError::Infeasible(e.to_string()))?;
                out.push(Part::Desc {
                    etype,
                    desc: pv.descriptor,
                    len: pv.total_bytes,
                });
            }
            let hint = Hint::FileAdministration(FileAdmin::Distribution {
                descriptor: rd.clone(),
                owners: None,
            });
            Ok((rd.global_bytes(), out, Some(hint)))
        }
    }
}

/// Deterministic file contents.
pub fn fill_byte(offset: u64) -> u8 {
    (offset.wrapping_mul(31).wrapping_add(7) % 251) as u8
}

fn file_name(i: u32) -> String {
    format!("bench-{i}")
}

fn prepare(
    cluster: &Cluster,
    spec: &BenchSpec,
    size: u64,
    hint: Option<&Hint>,
) -> Result<(), BenchError> {
    let mut s = cluster.session()?;
    let hint = if spec.layout_hint {
        hint.cloned()
            .or(Some(Hint::FileAdministration(FileAdmin::Striped {
                stripe: cluster.cfg.stripe,
            })))
    } else {
        None
    };
    const CHUNK: u64 = 1 << 20;
    for i in 0..spec.rotate_files {
        let h = s.open_with_hint(&file_name(i), amode::RDWR | amode::CREATE, hint.as_ref())?;
        let mut at = 0;
        while at < size {
            let n = CHUNK.min(size - at);
            let data: Vec<u8> = (at..at + n).map(fill_byte).collect();
            s.write_at(h, at, &data, n)?;
            at += n;
        }
        s.close(h)?;
    }
    Ok(())
}

fn transfer(s: &mut Session, file: &str, part: &Part, op: Op) -> Result<u64, ClientError> {
    let flags = if op == Op::Read {
        amode::RDONLY
    } else {
        amode::RDWR
    };
    let h = s.open(file, flags)?;
    let (len, at) = match part {
        Part::Bytes { offset, len } => (*len, *offset),
        Part::View {
            etype,
            filetype,
            len,
        } => {
            s.set_view(h, 0, *etype, filetype, "native")?;
            (*len, 0)
        }
        Part::Desc { etype, desc, len } => {
            s.set_view_desc(h, 0, *etype, desc.clone())?;
            (*len, 0)
        }
    };
    let ext = s.file_state(h)?.view.view.etype.extent();
    let mut buf = vec![0u8; len as usize];
    let st = match op {
        Op::Read => s.read_at(h, at / ext, &mut buf, len / ext)?,
        Op::Write => s.write_at(h, at / ext, &buf, len / ext)?,
    };
    s.close(h)?;
    Ok(st.bytes_transferred)
}

/// Runs `spec` on fresh in-process clusters built from the first servers
/// of `base`.
pub fn run(base: &ClusterConfig, spec: &BenchSpec, tcp: bool) -> Result<Vec<BenchRow>, BenchError> {
    spec.check()?;
    let mut rows = Vec::new();
    for &k in &spec.servers {
        if k as usize > base.servers.len() {
            return Err(BenchError::Infeasible(format!(
                "config has fewer than {k} servers"
            )));
        }
        let mut cfg = base.first(k as usize);
        for s in &mut cfg.servers {
            if let Some(b) = spec.buffer {
                s.buffer = b;
            }
            for d in &mut s.disks {
                d.latency_ms_per_mib = 0.0;
            }
        }
        let cluster = if tcp {
            Cluster::tcp(cfg)?
        } else {
            Cluster::loopback(cfg)?
        };
        let row = run_on(&cluster, spec, base)?;
        cluster.shutdown()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Runs one row against a running cluster.
fn run_on(
    cluster: &Cluster,
    spec: &BenchSpec,
    base: &ClusterConfig,
) -> Result<BenchRow, BenchError> {
    let (size, parts, hint) = parts(spec)?;
    prepare(cluster, spec, size, hint.as_ref())?;
    // latency applies to the measured transfers only
    {
        let s = cluster.session()?;
        for srv in &cluster.cfg.servers {
            let lat = spec.latency_ms_per_mib.or_else(|| {
                base.server(srv.id)
                    .and_then(|b| b.disks.first())
                    .map(|d| d.latency_ms_per_mib)
            });
            s.hint(&Hint::Administration {
                server: srv.id,
                best_disk: None,
                latency_ms_per_mib: lat,
            })?;
        }
    }
    let mut sessions = (0..spec.clients)
        .map(|_| cluster.session())
        .collect::<Result<Vec<_>, _>>()?;
    let stats = cluster.stats();
    let before = stats.snapshot();
    let barrier = Arc::new(Barrier::new(spec.clients as usize));
    let mut times = Vec::new();
    let mut moved = 0u64;
    for it in 0..spec.iterations {
        let file = file_name(it % spec.rotate_files);
        let results: Vec<Result<(f64, u64), ClientError>> = thread::scope(|sc| {
            let hs: Vec<_> = sessions
                .iter_mut()
                .zip(parts.iter())
                .map(|(s, part)| {
                    let (barrier, file) = (barrier.clone(), file.clone());
                    sc.spawn(move || {
                        if spec.barrier_sync {
                            barrier.wait();
                        }
                        let t0 = Instant::now();
                        let n = transfer(s, &file, part, spec.op)?;
                        let t = t0.elapsed().as_secs_f64();
                        if spec.barrier_sync {
                            barrier.wait();
                        }
                        Ok((t, n))
                    })
                })
                .collect();
            hs.into_iter()
                .map(|h| h.join().expect("bench client panicked"))
                .collect()
        });
        let mut slowest = 0f64;
        for r in results {
            let (t, n) = r?;
            slowest = slowest.max(t);
            moved += n;
        }
        times.push(slowest);
    }
    let delta = stats.snapshot().since(&before);
    let iters = spec.iterations as u64;
    let (acks, datas) = match spec.op {
        Op::Read => (
            delta.count(MsgType::Read, MsgClass::Ack),
            delta.count(MsgType::Data, MsgClass::Ack),
        ),
        Op::Write => (
            delta.count(MsgType::Write, MsgClass::Ack),
            delta.count(MsgType::Data, MsgClass::Er),
        ),
    };
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let variance = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let expected: u64 = parts.iter().map(Part::len).sum();
    debug_assert!(moved <= expected * iters);
    Ok(BenchRow {
        clients: spec.clients,
        servers: cluster.cfg.servers.len() as u32,
        max: times.iter().cloned().fold(f64::MIN, f64::max),
        min: times.iter().cloned().fold(f64::MAX, f64::min),
        mean,
        variance,
        acks: acks / iters,
        datas: datas / iters,
        bytes: moved / iters,
    })
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_and_checks() {
        let s = BenchSpec::from_json(r#"{"file_size": 1024, "clients": 4}"#).unwrap();
        assert_eq!(s.servers, vec![1]);
        assert_eq!(s.iterations, 1);
        assert!(s.barrier_sync);
        assert_eq!(s.op, Op::Read);
        assert!(matches!(s.pattern, Pattern::Contiguous));
        assert!(BenchSpec::from_json(r#"{"file_size": 3, "clients": 4}"#).is_err());
        assert!(
            BenchSpec::from_json(r#"{"file_size": 8, "clients": 4, "iterations": 0}"#).is_err()
        );
        let v = BenchSpec::from_json(
            r#"{"file_size": 64, "clients": 2, "pattern": {"view": "vector(2,1,2;int)"}}"#,
        )
        .unwrap();
        assert!(matches!(v.pattern, Pattern::View(_)));
    }

    #[test]
    fn csv_header_is_stable() {
        let row = BenchRow {
            clients: 1,
            servers: 2,
            max: 0.5,
            min: 0.25,
            mean: 0.375,
            variance: 0.015625,
            acks: 3,
            datas: 3,
            bytes: 100,
        };
        let mut out = Vec::new();
        write_csv(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(
            text.lines().nth(1),
            Some("1,2,0.5,0.25,0.375,0.015625,3,3,100")
        );
    }
}
