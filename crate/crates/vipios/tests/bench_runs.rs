mod common;

use std::net::TcpListener;

use vipios::amode::{CREATE, RDWR};
use vipios::bench::{self, BenchError, BenchSpec, Op};
use vipios::cluster::Cluster;

const MIB: u64 = 1 << 20;

fn spec(text: &str) -> BenchSpec {
    BenchSpec::from_json(text).unwrap()
}

#[test]
fn one_client_contiguous_counts_follow_the_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::config(&dir, 1, MIB);
    for buffer in [1024u64, 8192, 65536, MIB] {
        let s = spec(&format!(
            r#"{{"file_size": {MIB}, "clients": 1, "buffer": {buffer}, "iterations": 2}}"#
        ));
        let rows = bench::run(&base, &s, false).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        let chunks = MIB.div_ceil(buffer);
        assert_eq!(
            (r.acks, r.datas, r.bytes),
            (chunks, chunks, MIB),
            "buffer {buffer}"
        );
        assert!(r.min <= r.mean && r.mean <= r.max);
        assert!(r.variance >= 0.0);
        let again = bench::run(&base, &s, false).unwrap();
        assert_eq!((again[0].acks, again[0].datas), (r.acks, r.datas));
    }
}

#[test]
fn writes_are_counted_per_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::config(&dir, 2, MIB);
    let mut s = spec(&format!(
        r#"{{"file_size": {}, "clients": 2, "servers": [2], "buffer": 65536, "op": "write"}}"#,
        2 * MIB
    ));
    assert_eq!(s.op, Op::Write);
    let rows = bench::run(&base, &s, false).unwrap();
    assert_eq!(rows[0].bytes, 2 * MIB);
    // a data request per chunk plus one completion from each server
    // holding part of a client's range
    let chunks = 2 * MIB / 65536;
    assert_eq!((rows[0].acks, rows[0].datas), (chunks + 2 * 2, chunks));
    s.op = Op::Read;
    let rows = bench::run(&base, &s, false).unwrap();
    assert_eq!((rows[0].acks, rows[0].datas), (chunks, chunks));
}

#[test]
fn infeasible_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::config(&dir, 2, MIB);
    for text in [
        r#"{"file_size": 1000, "clients": 3}"#,
        r#"{"file_size": 1048576, "clients": 0}"#,
        r#"{"file_size": 1048576, "clients": 1, "servers": [4]}"#,
        r#"{"file_size": 1048576, "clients": 1, "iterations": 0}"#,
    ] {
        let r = BenchSpec::from_json(text).and_then(|s| bench::run(&base, &s, false));
        assert!(matches!(r, Err(BenchError::Infeasible(_))), "{text}: {r:?}");
    }
}

fn free_ports(n: usize) -> Vec<u16> {
    let ls: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    ls.iter().map(|l| l.local_addr().unwrap().port()).collect()
}

#[test]
fn tcp_cluster_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config(&dir, 3, 16 * 1024);
    cfg.stripe = 8192;
    for (s, p) in cfg.servers.iter_mut().zip(free_ports(3)) {
        s.addr = format!("127.0.0.1:{p}");
    }
    let c = Cluster::tcp(cfg).unwrap();
    let mut s = c.session().unwrap();
    let data = common::random_bytes(11, 300_000);
    let h = s.open("over-tcp", RDWR | CREATE).unwrap();
    s.write_at(h, 17, &data, data.len() as u64).unwrap();
    let mut back = vec![0u8; data.len()];
    assert_eq!(
        s.read_at(h, 17, &mut back, data.len() as u64)
            .unwrap()
            .bytes_transferred,
        data.len() as u64
    );
    assert_eq!(back, data);
    assert_eq!(s.get_size(h).unwrap(), 300_017);
    s.close(h).unwrap();
    drop(s);
    c.shutdown().unwrap();
}
