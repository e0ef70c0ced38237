//! Layout and fragmenter properties.

use std::collections::HashSet;

use proptest::prelude::*;
use vipios_core::distribution::{build_process_view, DimSpec, RuntimeDescriptor};
use vipios_core::layout::{fragment, segments_of, Layout, Segment};
use vipios_core::ByteRun;

fn arb_segments() -> impl Strategy<Value = Vec<Segment>> {
    prop::collection::vec((0u64..64, 1u64..300), 1..6).prop_map(|v| {
        let mut runs = Vec::new();
        let mut at = 0;
        for (gap, len) in v {
            runs.push(ByteRun::new(at + gap, len));
            at += gap + len + 1;
        }
        segments_of(&runs)
    })
}

/// Maps every logical byte of `[0, n)` to its storage location.
fn locations(l: &Layout, n: u64) -> Vec<(u32, u32, u64)> {
    l.pieces(0, n)
        .into_iter()
        .flat_map(|p| (0..p.len).map(move |i| (p.server, p.disk, p.physical + i)))
        .collect()
}

fn owner(l: &Layout, off: u64) -> u32 {
    l.pieces(off, 1)[0].server
}

fn check_fragments(l: &Layout, segs: &[Segment]) -> Result<(), TestCaseError> {
    let total: u64 = segs.iter().map(|s| s.len).sum();
    for s in l.servers() {
        let local = l.local_view(s);
        for known in [Some(l), None] {
            let f = fragment(segs, &local, known);
            prop_assert_eq!(f.local_bytes() + f.remote_bytes(), total);
            for seg in &f.local {
                for b in seg.file_offset..seg.file_offset + seg.len {
                    prop_assert_eq!(owner(l, b), s);
                }
            }
            if known.is_some() {
                prop_assert!(f.broadcast.is_empty());
                for (to, part) in &f.directed {
                    prop_assert!(*to != s);
                    for seg in part {
                        for b in seg.file_offset..seg.file_offset + seg.len {
                            prop_assert_eq!(owner(l, b), *to);
                        }
                    }
                }
            } else {
                prop_assert!(f.directed.is_empty());
            }
            // stream offsets still map to the same file bytes
            let mut all: Vec<Segment> = f.local.clone();
            all.extend(f.directed.iter().flat_map(|(_, v)| v.clone()));
            all.extend(f.broadcast.clone());
            for seg in all {
                let src = segs
                    .iter()
                    .find(|x| {
                        x.stream_offset <= seg.stream_offset
                            && seg.stream_offset < x.stream_offset + x.len
                    })
                    .unwrap();
                prop_assert_eq!(
                    seg.file_offset - src.file_offset,
                    seg.stream_offset - src.stream_offset
                );
            }
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn striped_storage_is_injective(stripe in 1u64..100, n in 1u32..5, size in 0u64..2000) {
        let l = Layout::striped(stripe, (0..n).map(|s| (s, 0)).collect()).unwrap();
        let locs = locations(&l, size);
        prop_assert_eq!(locs.len() as u64, size);
        prop_assert_eq!(locs.iter().collect::<HashSet<_>>().len() as u64, size);
    }

    #[test]
    fn striped_fragments(stripe in 1u64..100, n in 1u32..5, segs in arb_segments()) {
        let l = Layout::striped(stripe, (0..n).map(|s| (s, 0)).collect()).unwrap();
        check_fragments(&l, &segs)?;
    }

    #[test]
    fn static_fit_fragments(p0 in 1u64..4, p1 in 1u64..3, g0 in 1u64..12, g1 in 1u64..12, arg in 1u64..4, stripe in 1u64..50, segs in arb_segments()) {
        let rd = RuntimeDescriptor {
            grid: vec![p0, p1],
            elem_type_code: 4,
            elem_size: 4,
            dims: vec![DimSpec::cyclic(g0, arg), DimSpec::block(g1, g1.div_ceil(p1))],
        };
        let servers = 3u32;
        let sets: Vec<_> = (0..rd.num_procs())
            .map(|r| {
                let v = build_process_view(&rd, r).unwrap();
                let runs = v.descriptor.enumerate_runs(0, 0, v.total_bytes);
                ((r % servers as u64) as u32, 0u32, runs)
            })
            .collect();
        let size = rd.global_bytes();
        let l = Layout::static_fit(&sets, size, stripe, (0..servers).map(|s| (s, 0)).collect()).unwrap();
        let locs = locations(&l, size + 500);
        prop_assert_eq!(locs.iter().collect::<HashSet<_>>().len() as u64, size + 500);
        // each set is stored contiguously and in order on its server
        for (srv, _, runs) in &sets {
            let mut phys = Vec::new();
            for r in runs {
                for p in l.pieces(r.file_offset, r.length) {
                    prop_assert_eq!(p.server, *srv);
                    phys.extend(p.physical..p.physical + p.len);
                }
            }
            prop_assert!(phys.windows(2).all(|w| w[1] == w[0] + 1));
        }
        check_fragments(&l, &segs)?;
        let mut enc = Vec::new();
        l.encode_into(&mut enc);
        let mut pos = 0;
        prop_assert_eq!(Layout::decode(&enc, &mut pos).unwrap(), l);
    }
}
