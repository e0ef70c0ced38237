//! Regression suites modelled on the categories of the classic MPI-IO test
//! programs. Every suite talks to a running cluster through ordinary
//! client sessions and checks results against values computed here.

use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, ensure, Result};
use vipios_core::protocol::Status;
use vipios_core::viewdesc::BasicBlock;
use vipios_core::{AccessDesc, BaseType, DatatypeTree as T};

use crate::amode::{APPEND, CREATE, DELETE_ON_CLOSE, EXCL, RDONLY, RDWR, WRONLY};
use crate::client::{get_count, ClientError, IoStatus, Session, Whence};
use crate::cluster::Cluster;

pub const SUITES: [&str; 10] = [
    "openmodes",
    "manyopens",
    "openclose",
    "readwrite",
    "rdwr",
    "filecontrol",
    "localpointer",
    "collective",
    "nb_rdwr",
    "nb_localpointer",
];

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed {
            write!(f, "PASS {}", self.name)
        } else {
            write!(f, "FAIL {}: {}", self.name, self.detail)
        }
    }
}

/// Where a suite runs; every file name it uses starts with `prefix`.
pub struct Ctx<'a> {
    pub cluster: &'a Cluster,
    pub prefix: String,
}

impl Ctx<'_> {
    fn name(&self, n: &str) -> String {
        format!("{}{n}", self.prefix)
    }

    fn session(&self) -> Result<Session> {
        Ok(self.cluster.session()?)
    }
}

/// Runs the named suites (all of them for an empty list).
pub fn run(cluster: &Cluster, only: &[String]) -> Vec<SuiteResult> {
    let nonce = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    SUITES
        .iter()
        .filter(|s| only.is_empty() || only.iter().any(|o| o == *s))
        .map(|&name| {
            let ctx = Ctx {
                cluster,
                prefix: format!("r{nonce:x}-{name}-"),
            };
            let r = match name {
                "openmodes" => openmodes(&ctx),
                "manyopens" => manyopens(&ctx),
                "openclose" => openclose(&ctx),
                "readwrite" => readwrite(&ctx),
                "rdwr" => rdwr(&ctx),
                "filecontrol" => filecontrol(&ctx),
                "localpointer" => localpointer(&ctx),
                "collective" => collective(&ctx),
                "nb_rdwr" => nb_rdwr(&ctx),
                _ => nb_localpointer(&ctx),
            };
            SuiteResult {
                name,
                passed: r.is_ok(),
                detail: r.err().map(|e| format!("{e:#}")).unwrap_or_default(),
            }
        })
        .collect()
}

fn status_of(e: &ClientError) -> Option<Status> {
    match e {
        ClientError::Server(s) => Some(*s),
        _ => None,
    }
}

/// Fails unless `r` is an error satisfying `want`.
fn expect_err<X: std::fmt::Debug>(
    what: &str,
    r: std::result::Result<X, ClientError>,
    want: impl Fn(&ClientError) -> bool,
) -> Result<()> {
    match r {
        Err(e) if want(&e) => Ok(()),
        Err(e) => bail!("{what}: unexpected error {e}"),
        Ok(x) => bail!("{what}: expected failure, got {x:?}"),
    }
}

fn ints(range: std::ops::Range<i32>) -> Vec<u8> {
    range.flat_map(|i| i.to_le_bytes()).collect()
}

fn as_ints(b: &[u8]) -> Vec<i32> {
    b.chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn int_view(s: &mut Session, h: usize) -> Result<()> {
    s.set_view(h, 0, BaseType::Int, &T::base(BaseType::Int), "native")?;
    Ok(())
}

fn openmodes(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("m");
    expect_err("open missing file", s.open(&f, RDWR), |e| {
        status_of(e) == Some(Status::NoSuchFile)
    })?;
    for bad in [
        RDONLY | CREATE,
        RDONLY | EXCL,
        RDWR | WRONLY,
        0,
        RDWR | 1 << 12,
    ] {
        expect_err("conflicting mode", s.open(&f, bad), |e| {
            status_of(e) == Some(Status::ModeConflict)
        })?;
    }

    let h = s.open(&f, WRONLY | CREATE)?;
    ensure!(s.get_amode(h)? == WRONLY | CREATE, "amode not kept");
    s.write(h, &[7u8; 100], 100)?;
    let mut buf = [0u8; 100];
    expect_err(
        "read of write-only file",
        s.read_at(h, 0, &mut buf, 100),
        |e| matches!(e, ClientError::NotReadable) || status_of(e) == Some(Status::NotReadable),
    )?;
    s.close(h)?;

    expect_err(
        "exclusive create of existing file",
        s.open(&f, RDWR | CREATE | EXCL),
        |e| status_of(e) == Some(Status::Exists),
    )?;

    let h = s.open(&f, RDONLY)?;
    expect_err("write of read-only file", s.write(h, &[1u8; 4], 4), |e| {
        matches!(e, ClientError::NotWritable) || status_of(e) == Some(Status::NotWritable)
    })?;
    s.read(h, &mut buf, 100)?;
    ensure!(buf == [7u8; 100], "read-only contents differ");
    s.close(h)?;

    let h = s.open(&f, RDWR | APPEND)?;
    ensure!(
        s.get_position(h)? == 100,
        "append does not start at the end"
    );
    s.write(h, b"tail", 4)?;
    ensure!(s.get_size(h)? == 104, "append did not extend the file");
    s.close(h)?;

    let g = ctx.name("tmp");
    let h = s.open(&g, RDWR | CREATE | DELETE_ON_CLOSE)?;
    s.write(h, b"scratch", 7)?;
    s.close(h)?;
    expect_err("delete on close", s.open(&g, RDONLY), |e| {
        status_of(e) == Some(Status::NoSuchFile)
    })?;

    let h = s.open(&f, RDWR)?;
    ensure!(s.get_atomicity(h)?, "atomic mode expected");
    expect_err("non-atomic mode", s.set_atomicity(h, false), |e| {
        matches!(e, ClientError::Unsupported)
    })?;
    s.set_atomicity(h, true)?;
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

fn manyopens(ctx: &Ctx) -> Result<()> {
    const N: usize = 37;
    let mut s = ctx.session()?;
    let mut hs = Vec::new();
    for i in 0..N {
        let h = s.open(&ctx.name(&format!("f{i}")), RDWR | CREATE)?;
        ensure!(h == i, "handle {h} for open number {i}");
        s.write(h, &(i as u32).to_le_bytes(), 4)?;
        hs.push(h);
    }
    ensure!(s.handles().capacity() >= N, "handle table did not grow");
    let mut ids: Vec<u32> = hs
        .iter()
        .map(|&h| s.file_state(h).unwrap().file_id)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ensure!(ids.len() == N, "file ids are not distinct");

    // a second handle on one file shares its contents
    let again = s.open(&ctx.name("f3"), RDONLY)?;
    ensure!(again == N, "extra handle {again}");
    ensure!(
        s.file_state(again)?.file_id == s.file_state(3)?.file_id,
        "same name, different file"
    );

    for &h in hs.iter().rev() {
        let mut b = [0u8; 4];
        s.read_at(h, 0, &mut b, 4)?;
        ensure!(u32::from_le_bytes(b) as usize == h, "file {h} holds {b:?}");
        s.close(h)?;
        // closed handles stay unused while others are open
        ensure!(s.file_state(h).is_err(), "closed handle {h} still valid");
    }
    s.close(again)?;
    ensure!(s.handles().n_open() == 0, "files left open");
    let h = s.open(&ctx.name("f0"), RDONLY)?;
    ensure!(h == 0, "table not reset after all closes");
    s.close(h)?;
    for i in 0..N {
        s.remove(&ctx.name(&format!("f{i}")))?;
    }
    Ok(())
}

fn openclose(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    expect_err("close never-opened handle", s.close(5), |e| {
        matches!(e, ClientError::BadHandle)
    })?;
    let f = ctx.name("c");
    let h = s.open(&f, RDWR | CREATE)?;
    s.close(h)?;
    expect_err("double close", s.close(h), |e| {
        matches!(e, ClientError::BadHandle)
    })?;
    let mut b = [0u8; 1];
    expect_err("read on closed handle", s.read(h, &mut b, 1), |e| {
        matches!(e, ClientError::BadHandle)
    })?;
    expect_err("size of closed handle", s.get_size(h), |e| {
        matches!(e, ClientError::BadHandle)
    })?;
    s.remove(&f)?;
    expect_err("remove missing file", s.remove(&f), |e| {
        status_of(e) == Some(Status::NoSuchFile)
    })?;
    expect_err("open removed file", s.open(&f, RDONLY), |e| {
        status_of(e) == Some(Status::NoSuchFile)
    })?;

    // reopening after close sees the data
    let h = s.open(&f, RDWR | CREATE)?;
    s.write(h, b"kept", 4)?;
    s.close(h)?;
    let h = s.open(&f, RDONLY)?;
    let mut b = [0u8; 4];
    s.read(h, &mut b, 4)?;
    ensure!(&b == b"kept", "data lost across close");
    s.close(h)?;
    s.remove(&f)?;

    s.disconnect()?;
    expect_err("second disconnect", s.disconnect(), |e| {
        matches!(e, ClientError::NotConnected)
    })?;
    expect_err("open after disconnect", s.open(&f, RDWR | CREATE), |e| {
        matches!(e, ClientError::NotConnected)
    })?;
    Ok(())
}

fn pattern(client: usize, at: u64) -> u8 {
    (at as usize * 7 + client * 13 + 1) as u8
}

fn readwrite(ctx: &Ctx) -> Result<()> {
    const CLIENTS: usize = 4;
    // sizes straddle the inline threshold
    let sizes = [1000u64, 70_000, 4096, 150_000];
    let starts: Vec<u64> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let s = *acc;
            *acc += n;
            Some(s)
        })
        .collect();
    let f = ctx.name("rw");
    ctx.session()?.open(&f, RDWR | CREATE).map(|_| ())?;
    let barrier = Barrier::new(CLIENTS);
    let results: Vec<Result<()>> = thread::scope(|sc| {
        let hs: Vec<_> = (0..CLIENTS)
            .map(|c| {
                let (f, barrier, starts) = (&f, &barrier, &starts);
                sc.spawn(move || -> Result<()> {
                    let mut s = ctx.session()?;
                    let h = s.open(f, RDWR)?;
                    let (at, n) = (starts[c], sizes[c]);
                    let data: Vec<u8> = (at..at + n).map(|i| pattern(c, i)).collect();
                    barrier.wait();
                    let st = s.write_at(h, at, &data, n)?;
                    ensure!(
                        st.bytes_transferred == n,
                        "client {c} wrote {}",
                        st.bytes_transferred
                    );
                    barrier.wait();
                    let mut back = vec![0u8; n as usize];
                    s.read_at(h, at, &mut back, n)?;
                    ensure!(back == data, "client {c} read back different bytes");
                    s.close(h)?;
                    Ok(())
                })
            })
            .collect();
        hs.into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("client panicked"))))
            .collect()
    });
    for r in results {
        r?;
    }
    let mut s = ctx.session()?;
    let h = s.open(&f, RDONLY)?;
    let total: u64 = sizes.iter().sum();
    ensure!(s.get_size(h)? == total, "file size");
    let mut all = vec![0u8; total as usize];
    s.read(h, &mut all, total)?;
    for c in 0..CLIENTS {
        let (at, n) = (starts[c], sizes[c]);
        ensure!(
            (at..at + n).all(|i| all[i as usize] == pattern(c, i)),
            "whole-file read differs in client {c}'s range"
        );
    }
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

/// File int index of view element `k` for `vector(count, blocklen, stride; int)`.
fn vector_index(k: u64, count: u64, blocklen: u64, stride: u64) -> u64 {
    let per = count * blocklen;
    let extent = (count - 1) * stride + blocklen;
    let (p, j) = (k / per, k % per);
    p * extent + (j / blocklen) * stride + j % blocklen
}

fn rdwr(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("ints");
    let h = s.open(&f, RDWR | CREATE)?;
    int_view(&mut s, h)?;
    s.write(h, &ints(0..100), 100)?;
    s.seek(h, 0, Whence::Set)?;
    let mut b = vec![0u8; 40];
    let mut got = Vec::new();
    s.read(h, &mut b, 10)?;
    got.push(as_ints(&b));
    s.read(h, &mut b, 10)?;
    got.push(as_ints(&b));
    s.read_at(h, 51, &mut b, 10)?;
    got.push(as_ints(&b));
    s.read(h, &mut b, 10)?;
    got.push(as_ints(&b));
    let want: Vec<Vec<i32>> = [0..10, 10..20, 51..61, 20..30]
        .into_iter()
        .map(|r| r.collect())
        .collect();
    ensure!(got == want, "sequential reads {got:?}");
    ensure!(
        s.get_position(h)? == 30,
        "explicit offset moved the pointer"
    );

    // strided file view
    let ft = T::vector(3, 2, 5, T::base(BaseType::Int));
    s.set_view(h, 0, BaseType::Int, &ft, "native")?;
    let mut b = vec![0u8; 4 * 12];
    let st = s.read(h, &mut b, 12)?;
    ensure!(
        get_count(&st, BaseType::Int)? == 12,
        "count {}",
        get_count(&st, BaseType::Int)?
    );
    let want: Vec<i32> = (0..12).map(|k| vector_index(k, 3, 2, 5) as i32).collect();
    ensure!(as_ints(&b) == want, "vector view read {:?}", as_ints(&b));

    // write through the view, check with a plain view
    let marks: Vec<u8> = (0..6).flat_map(|k: i32| (1000 + k).to_le_bytes()).collect();
    s.write_at(h, 6, &marks, 6)?;
    int_view(&mut s, h)?;
    let mut all = vec![0u8; 400];
    s.read_at(h, 0, &mut all, 100)?;
    let mut expect: Vec<i32> = (0..100).collect();
    for k in 0..6 {
        expect[vector_index(6 + k, 3, 2, 5) as usize] = 1000 + k as i32;
    }
    ensure!(as_ints(&all) == expect, "write through view landed wrong");

    // memory datatypes: every other int of the buffer
    let mem = T::vector(4, 1, 2, T::base(BaseType::Int));
    let mut sparse = vec![0xffu8; 4 * 7];
    s.seek(h, 0, Whence::Set)?;
    s.read_typed(h, &mut sparse, 1, &mem)?;
    let sp = as_ints(&sparse);
    ensure!(
        sp[0] == 0 && sp[2] == 1 && sp[4] == 2 && sp[6] == 3,
        "scatter {sp:?}"
    );
    ensure!(
        sp[1] == -1 && sp[3] == -1 && sp[5] == -1,
        "scatter touched holes"
    );
    let src = ints(50..57);
    s.seek(h, 90, Whence::Set)?;
    s.write_typed(h, &src, 1, &mem)?;
    let mut tail = vec![0u8; 16];
    s.read_at(h, 90, &mut tail, 4)?;
    ensure!(
        as_ints(&tail) == vec![50, 52, 54, 56],
        "gather {:?}",
        as_ints(&tail)
    );
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

/// Two-level byte descriptor: 3 repeats of (2 repeats of 5 bytes every 5)
/// every 20 bytes.
pub fn two_level() -> AccessDesc {
    let inner = AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0);
    AccessDesc::new(vec![BasicBlock::nested(0, 3, 2, 20, inner)], 0)
}

fn filecontrol(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("fc");
    let h = s.open(&f, RDWR | CREATE)?;
    ensure!(s.get_size(h)? == 0, "new file not empty");
    ensure!(s.get_position(h)? == 0, "new file position");
    let data: Vec<u8> = (0..200u32).map(|i| i as u8).collect();
    s.write(h, &data, 200)?;
    ensure!(s.get_position(h)? == 200, "position after write");
    ensure!(s.get_size(h)? == 200, "size after write");

    s.set_view_desc(h, 0, BaseType::Byte, two_level())?;
    ensure!(
        s.get_byte_offset(h, 23)? == 53,
        "byte offset of 23 is {}",
        s.get_byte_offset(h, 23)?
    );
    ensure!(s.get_byte_offset(h, 0)? == 0, "byte offset of 0");
    s.seek(h, 23, Whence::Set)?;
    let mut b = [0u8; 2];
    s.read(h, &mut b, 2)?;
    ensure!(b == [53, 54], "read at view offset 23 gave {b:?}");
    ensure!(s.get_position(h)? == 25, "position after view read");
    s.seek(h, 5, Whence::Cur)?;
    ensure!(s.get_position(h)? == 30, "seek cur");
    expect_err("seek before start", s.seek(h, -100, Whence::Cur), |e| {
        matches!(e, ClientError::BadOffset)
    })?;

    s.set_view(h, 0, BaseType::Byte, &T::base(BaseType::Byte), "native")?;
    s.set_size(h, 1000)?;
    ensure!(s.get_size(h)? == 1000, "set_size grow");
    ensure!(s.seek(h, 0, Whence::End)? == 1000, "seek end");
    s.set_size(h, 10)?;
    ensure!(s.get_size(h)? == 10, "set_size shrink");
    let mut all = vec![0u8; 50];
    let st = s.read_at(h, 0, &mut all, 50)?;
    ensure!(
        st.bytes_transferred == 10,
        "read past end moved {}",
        st.bytes_transferred
    );
    ensure!(all[..10] == data[..10], "truncated contents");
    s.set_size(h, 20)?;
    s.read_at(h, 0, &mut all, 20)?;
    ensure!(
        all[10..20].iter().all(|&x| x == 0),
        "regrown bytes not zero"
    );
    s.preallocate(h, 500)?;
    ensure!(s.get_size(h)? == 500, "preallocate grow");
    s.preallocate(h, 100)?;
    ensure!(s.get_size(h)? == 500, "preallocate must not shrink");
    s.sync(h)?;
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

fn holes_view(s: &mut Session, h: usize) -> Result<()> {
    // one int every 12 bytes, after 8 bytes of header
    s.set_view(
        h,
        8,
        BaseType::Int,
        &T::hvector(3, 1, 12, T::base(BaseType::Int)),
        "native",
    )?;
    Ok(())
}

/// File byte offset of element `k` of [`holes_view`].
fn hole_offset(k: u64) -> u64 {
    // hvector(3,1,12) has extent 28
    8 + (k / 3) * 28 + (k % 3) * 12
}

fn localpointer(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("lp");
    let h = s.open(&f, RDWR | CREATE)?;
    expect_err(
        "etype/filetype mismatch",
        s.set_view(h, 0, BaseType::Int, &T::base(BaseType::Double), "native"),
        |e| matches!(e, ClientError::EtypeMismatch),
    )?;
    expect_err(
        "mixed filetype",
        s.set_view(
            h,
            0,
            BaseType::Int,
            &"struct([1,1],[0,8];int,double)".parse()?,
            "native",
        ),
        |e| matches!(e, ClientError::EtypeMismatch),
    )?;
    expect_err(
        "foreign representation",
        s.set_view(h, 0, BaseType::Int, &T::base(BaseType::Int), "external32"),
        |e| matches!(e, ClientError::UnsupportedRepresentation),
    )?;
    // a rejected view leaves the old one in place
    ensure!(
        s.get_view(h)?.1 == BaseType::Byte,
        "rejected view was installed"
    );

    holes_view(&mut s, h)?;
    let (disp, etype, _) = s.get_view(h)?;
    ensure!(disp == 8 && etype == BaseType::Int, "get_view");
    s.write(h, &ints(1..7), 6)?;
    ensure!(
        s.get_position(h)? == 6,
        "position counts etypes in the view"
    );
    ensure!(
        s.get_byte_offset(h, 4)? == hole_offset(4),
        "byte offset in holes view"
    );

    s.set_view(h, 0, BaseType::Byte, &T::base(BaseType::Byte), "native")?;
    let size = s.get_size(h)?;
    ensure!(size == hole_offset(5) + 4, "file size {size}");
    let mut raw = vec![0u8; size as usize];
    s.read(h, &mut raw, size)?;
    let mut expect = vec![0u8; size as usize];
    for k in 0..6u64 {
        let at = hole_offset(k) as usize;
        expect[at..at + 4].copy_from_slice(&(k as i32 + 1).to_le_bytes());
    }
    ensure!(raw == expect, "holes were written or data misplaced");

    holes_view(&mut s, h)?;
    ensure!(s.get_position(h)? == 0, "new view must reset the pointer");
    s.seek(h, 2, Whence::Set)?;
    let mut b = vec![0u8; 12];
    s.read(h, &mut b, 3)?;
    ensure!(
        as_ints(&b) == vec![3, 4, 5],
        "read across holes {:?}",
        as_ints(&b)
    );
    ensure!(s.seek(h, 0, Whence::End)? == 6, "end of view");
    let mut odd = [0u8; 3];
    expect_err("partial etype", s.read_at(h, 0, &mut odd, 1), |e| {
        matches!(e, ClientError::BufferTooSmall)
    })?;
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

fn collective(ctx: &Ctx) -> Result<()> {
    const CLIENTS: usize = 4;
    const ROUNDS: u64 = 5;
    // client c writes (c + 1) * 300 bytes per round, packed round by round
    let len = |c: usize| (c as u64 + 1) * 300;
    let round: u64 = (0..CLIENTS).map(len).sum();
    let start = |c: usize| (0..c).map(len).sum::<u64>();
    let byte = |c: usize, r: u64, i: u64| ((c as u64 * 31 + r * 7 + i) % 251) as u8;
    let f = ctx.name("coll");
    ctx.session()?.open(&f, RDWR | CREATE).map(|_| ())?;
    let barrier = Arc::new(Barrier::new(CLIENTS));
    let results: Vec<Result<()>> = thread::scope(|sc| {
        let hs: Vec<_> = (0..CLIENTS)
            .map(|c| {
                let (f, barrier) = (&f, barrier.clone());
                sc.spawn(move || -> Result<()> {
                    let mut s = ctx.session()?;
                    let h = s.open(f, RDWR)?;
                    for r in 0..ROUNDS {
                        let data: Vec<u8> = (0..len(c)).map(|i| byte(c, r, i)).collect();
                        barrier.wait();
                        s.write_at(h, r * round + start(c), &data, len(c))?;
                    }
                    barrier.wait();
                    // every client checks the whole file
                    let mut all = vec![0u8; (ROUNDS * round) as usize];
                    let st = s.read_at(h, 0, &mut all, ROUNDS * round)?;
                    ensure!(
                        st.bytes_transferred == ROUNDS * round,
                        "client {c} short read"
                    );
                    for r in 0..ROUNDS {
                        for d in 0..CLIENTS {
                            let at = (r * round + start(d)) as usize;
                            ensure!(
                                (0..len(d)).all(|i| all[at + i as usize] == byte(d, r, i)),
                                "client {c} sees bad data of client {d} round {r}"
                            );
                        }
                    }
                    s.close(h)?;
                    Ok(())
                })
            })
            .collect();
        hs.into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("client panicked"))))
            .collect()
    });
    for r in results {
        r?;
    }
    ctx.session()?.remove(&f)?;
    Ok(())
}

fn nb_rdwr(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("nb");
    let h = s.open(&f, RDWR | CREATE)?;
    int_view(&mut s, h)?;
    let mut w = s.iwrite(h, &ints(0..100), 100)?;
    let st = s.wait(&mut w)?;
    ensure!(get_count(&st, BaseType::Int)? == 100, "iwrite count");
    ensure!(s.get_position(h)? == 100, "iwrite position");
    ensure!(
        matches!(
            get_count(&IoStatus::UNFINISHED, BaseType::Int),
            Err(ClientError::UnfinishedRequest)
        ),
        "count of unfinished request"
    );

    s.seek(h, 0, Whence::Set)?;
    let mut a = s.iread(h, vec![0; 40], 10)?;
    let mut b = s.iread(h, vec![0; 40], 10)?;
    let mut c = s.iread_at(h, 51, vec![0; 40], 10)?;
    ensure!(s.get_position(h)? == 20, "iread reserves at issue");
    let (done, st) = s.test(&mut b)?;
    ensure!(done || st.file_ref == -1, "unfinished request status");
    s.wait(&mut b)?;
    s.wait(&mut c)?;
    s.wait(&mut a)?;
    let got: Vec<Vec<i32>> = [&mut a, &mut b, &mut c]
        .into_iter()
        .map(|r| as_ints(&r.take_buffer().unwrap()))
        .collect();
    let want: Vec<Vec<i32>> = [0..10, 10..20, 51..61]
        .into_iter()
        .map(|r| r.collect())
        .collect();
    ensure!(got == want, "ireads {got:?}");
    let (done, st) = s.test(&mut a)?;
    ensure!(done && st.file_ref == h as i64, "test after wait");

    // non-blocking equals blocking
    let mut blocking = vec![0u8; 400];
    s.read_at(h, 0, &mut blocking, 100)?;
    let mut r = s.iread_at(h, 0, vec![0; 400], 100)?;
    s.wait(&mut r)?;
    ensure!(
        r.take_buffer().unwrap() == blocking,
        "iread differs from read"
    );

    let mut wa = s.iwrite_at(h, 95, &ints(-5..0), 5)?;
    s.wait(&mut wa)?;
    let mem = T::vector(2, 1, 3, T::base(BaseType::Int));
    s.seek(h, 95, Whence::Set)?;
    let mut t = s.iread_typed(h, vec![0; 4 * 4], 1, &mem)?;
    s.wait(&mut t)?;
    let sp = as_ints(&t.take_buffer().unwrap());
    ensure!(sp[0] == -5 && sp[3] == -4, "iread_typed {sp:?}");
    s.close(h)?;
    s.remove(&f)?;
    Ok(())
}

fn nb_localpointer(ctx: &Ctx) -> Result<()> {
    let mut s = ctx.session()?;
    let f = ctx.name("nblp");
    let h = s.open(&f, RDWR | CREATE)?;
    holes_view(&mut s, h)?;
    let mut w1 = s.iwrite(h, &ints(10..13), 3)?;
    let mut w2 = s.iwrite(h, &ints(13..16), 3)?;
    ensure!(s.get_position(h)? == 6, "iwrite reserves at issue");
    s.wait(&mut w2)?;
    s.wait(&mut w1)?;

    s.set_view(h, 0, BaseType::Byte, &T::base(BaseType::Byte), "native")?;
    let mut r = s.iread(h, vec![0; 64], 64)?;
    let st = s.wait(&mut r)?;
    ensure!(
        st.bytes_transferred == hole_offset(5) + 4,
        "read past end {}",
        st.bytes_transferred
    );
    let raw = r.take_buffer().unwrap();
    for k in 0..6u64 {
        let at = hole_offset(k) as usize;
        ensure!(
            raw[at..at + 4] == (10 + k as i32).to_le_bytes(),
            "element {k} misplaced"
        );
    }

    holes_view(&mut s, h)?;
    s.seek(h, 1, Whence::Set)?;
    let mut r = s.iread(h, vec![0; 16], 4)?;
    s.wait(&mut r)?;
    ensure!(
        as_ints(&r.take_buffer().unwrap()) == vec![11, 12, 13, 14],
        "iread across holes"
    );
    expect_err(
        "iread on closed handle",
        {
            s.close(h)?;
            s.iread(h, vec![0; 4], 1)
        },
        |e| matches!(e, ClientError::BadHandle),
    )?;
    s.remove(&f)?;
    Ok(())
}
