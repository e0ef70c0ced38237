#![allow(dead_code)]

use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use vipios::amode::{CREATE, RDWR};
use vipios::client::Session;
use vipios::cluster::Cluster;
use vipios::config::ClusterConfig;
use vipios_core::file_model::{
    model_open, model_read, model_seek, model_write, Mapping, MappingFunction, ModelFile, Modes,
};
use vipios_core::{BaseType, DatatypeTree};
use vipios_oracle::{arb_tree, expand_offsets, psi_indices, view_byte, view_len_within};

pub fn config(dir: &tempfile::TempDir, n: u32, buffer: u64) -> ClusterConfig {
    ClusterConfig::local(n, dir.path(), buffer, 0.0, 0)
}

pub fn cluster(n: u32, buffer: u64) -> (tempfile::TempDir, Cluster) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, n, buffer);
    (dir, Cluster::loopback(cfg).unwrap())
}

pub fn random_bytes(seed: u64, n: usize) -> Vec<u8> {
    let mut b = vec![0u8; n];
    rand::rngs::StdRng::seed_from_u64(seed).fill_bytes(&mut b);
    b
}

/// Cluster used by the view equivalence cases: small stripes, buffers and
/// inline threshold so that every transfer path is exercised.
pub fn view_cluster() -> (tempfile::TempDir, Cluster) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&dir, 3, 4096);
    cfg.stripe = 1024;
    cfg.inline_threshold = 2048;
    (dir, Cluster::loopback(cfg).unwrap())
}

/// One randomized view access: the file contents, a view and a read and a
/// write through it. Positions are per mille of the view length.
#[derive(Debug, Clone)]
pub struct ViewCase {
    pub tree: DatatypeTree,
    pub etype: BaseType,
    pub disp: u64,
    pub file_len: usize,
    pub seed: u64,
    pub read_at: u64,
    pub read_len: u64,
    pub write_at: u64,
    pub write_len: u64,
}

pub fn arb_view_case() -> impl Strategy<Value = ViewCase> {
    let tree = arb_tree(3, 4096).prop_filter_map("mixed element types", |t| {
        let e = t.uniform_element_type().ok()?;
        Some((t, e))
    });
    (
        tree,
        0u64..64,
        0usize..=65536,
        any::<u64>(),
        0u64..=1000,
        0u64..=1000,
        0u64..=1000,
        0u64..=1000,
    )
        .prop_map(
            |((tree, etype), disp, file_len, seed, read_at, read_len, write_at, write_len)| {
                ViewCase {
                    tree,
                    etype,
                    disp,
                    file_len,
                    seed,
                    read_at,
                    read_len,
                    write_at,
                    write_len,
                }
            },
        )
}

fn model_bytes_write(file: ModelFile, at: &[u64], data: &[u8]) -> ModelFile {
    let mut h = model_open(file, Modes::READ_WRITE, Mapping::Fixpoint);
    for (&pos, &b) in at.iter().zip(data) {
        let len = h.file.flen() as u64;
        if pos > len {
            model_seek(&mut h, len as usize).unwrap();
            let zeros = vec![vec![0u8]; (pos - len) as usize];
            model_write(&mut h, zeros.len(), &zeros).unwrap();
        }
        model_seek(&mut h, pos as usize).unwrap();
        model_write(&mut h, 1, &[vec![b]]).unwrap();
    }
    h.file
}

/// Runs `case` against the cluster and against the record-file model under
/// the mapping function obtained by expanding the view.
pub fn check_view_case(s: &mut Session, name: &str, case: &ViewCase) -> Result<(), String> {
    let e = |x: vipios::client::ClientError| x.to_string();
    let contents = random_bytes(case.seed, case.file_len);
    let h = s.open(name, RDWR | CREATE).map_err(e)?;
    s.write_at(h, 0, &contents, contents.len() as u64)
        .map_err(e)?;
    s.set_view(h, case.disp, case.etype, &case.tree, "native")
        .map_err(e)?;

    let offsets = expand_offsets(&case.tree);
    if offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err("filetype is not monotone".into());
    }
    let extent = case.tree.extent();
    let ext = case.etype.extent();
    let vlen = view_len_within(case.disp, &offsets, extent, contents.len() as u64);
    let units = vlen / ext;

    // read
    let start = case.read_at * (units + 1) / 1000;
    let count = case.read_len * (units + 2 - start.min(units)) / 1000;
    let mut buf = vec![0u8; (count * ext) as usize];
    let st = s.read_at(h, start, &mut buf, count).map_err(e)?;
    let psi = MappingFunction::new(psi_indices(case.disp, &offsets, extent, 0, vlen));
    let mut mh = model_open(
        ModelFile::from_bytes(&contents, 1).unwrap(),
        Modes::READ,
        Mapping::Explicit(psi),
    );
    let mut recs = Vec::new();
    let expect: Vec<u8> = match model_seek(&mut mh, (start * ext) as usize) {
        Ok(()) => match model_read(&mut mh, (count * ext) as usize, buf.len(), &mut recs) {
            Ok(_) => recs.concat(),
            Err(_) => Vec::new(),
        },
        Err(_) => Vec::new(),
    };
    if st.bytes_transferred != expect.len() as u64 {
        return Err(format!(
            "read {} bytes, model {}",
            st.bytes_transferred,
            expect.len()
        ));
    }
    if buf[..expect.len()] != expect[..] {
        return Err("read bytes differ from the model".into());
    }

    // write
    let wstart = case.write_at * (units + 2) / 1000;
    let wcount = (case.write_len * 2048 / 1000 / ext).max(1);
    let data = random_bytes(case.seed ^ 0x5eed, (wcount * ext) as usize);
    let st = s.write_at(h, wstart, &data, wcount).map_err(e)?;
    if st.bytes_transferred != data.len() as u64 {
        return Err(format!(
            "wrote {} of {} bytes",
            st.bytes_transferred,
            data.len()
        ));
    }
    let at: Vec<u64> = (0..data.len() as u64)
        .map(|k| view_byte(case.disp, &offsets, extent, wstart * ext + k))
        .collect();
    let mut start_file = ModelFile::new();
    if !contents.is_empty() {
        start_file = ModelFile::from_bytes(&contents, 1).unwrap();
    }
    let expect = model_bytes_write(start_file, &at, &data).to_bytes();

    s.set_view(
        h,
        0,
        BaseType::Byte,
        &DatatypeTree::base(BaseType::Byte),
        "native",
    )
    .map_err(e)?;
    let size = s.get_size(h).map_err(e)?;
    if size != expect.len() as u64 {
        return Err(format!("size {size} after write, model {}", expect.len()));
    }
    let mut all = vec![0u8; expect.len()];
    s.read_at(h, 0, &mut all, size).map_err(e)?;
    if all != expect {
        let first = all.iter().zip(&expect).position(|(a, b)| a != b);
        return Err(format!(
            "file differs from the model after write, first at {first:?}"
        ));
    }
    s.close(h).map_err(e)?;
    s.remove(name).map_err(e)?;
    Ok(())
}
