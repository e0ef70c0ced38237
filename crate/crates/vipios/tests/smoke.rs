use vipios::amode::*;
use vipios::cluster::Cluster;
use vipios::config::ClusterConfig;
use vipios_core::{BaseType, DatatypeTree};

fn cluster(n: u32, buffer: u64) -> (tempfile::TempDir, Cluster) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ClusterConfig::local(n, dir.path(), buffer, 0.0, 0);
    (dir, Cluster::loopback(cfg).unwrap())
}

#[test]
fn small_and_large_round_trips() {
    for n in [1, 2, 3] {
        let (_d, c) = cluster(n, 8192);
        let mut s = c.session().unwrap();
        let h = s.open("a", RDWR | CREATE).unwrap();
        let small: Vec<u8> = (0..100u8).collect();
        assert_eq!(s.write(h, &small, 100).unwrap().bytes_transferred, 100);
        let big: Vec<u8> = (0..300_000u32).map(|i| (i * 7 % 251) as u8).collect();
        s.write_at(h, 1000, &big, big.len() as u64).unwrap();
        assert_eq!(s.get_size(h).unwrap(), 301_000);
        let mut back = vec![0u8; 100];
        s.read_at(h, 0, &mut back, 100).unwrap();
        assert_eq!(back, small);
        let mut back = vec![0u8; big.len()];
        let st = s.read_at(h, 1000, &mut back, big.len() as u64).unwrap();
        assert_eq!(st.bytes_transferred, big.len() as u64);
        assert_eq!(back, big);
        // past end of file
        let mut tail = vec![0u8; 50];
        assert_eq!(
            s.read_at(h, 300_990, &mut tail, 50)
                .unwrap()
                .bytes_transferred,
            10
        );
        s.close(h).unwrap();
        drop(s);
        c.shutdown().unwrap();
    }
}

#[test]
fn strided_view_round_trip() {
    let (_d, c) = cluster(2, 4096);
    let mut s = c.session().unwrap();
    let h = s.open("v", RDWR | CREATE).unwrap();
    let ft = DatatypeTree::vector(10, 2, 10, DatatypeTree::base(BaseType::Int));
    s.set_view(h, 4, BaseType::Int, &ft, "native").unwrap();
    let data: Vec<u8> = (0..80u8).collect();
    s.write(h, &data, 20).unwrap();
    assert_eq!(s.get_position(h).unwrap(), 20);
    let mut back = vec![0u8; 80];
    s.read_at(h, 0, &mut back, 20).unwrap();
    assert_eq!(back, data);
    assert_eq!(s.get_byte_offset(h, 2).unwrap(), 4 + 40);
}
