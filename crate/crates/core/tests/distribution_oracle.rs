//! Process views checked against an element-by-element HPF assignment.

use proptest::prelude::*;
use vipios_core::distribution::{
    build_process_view, cover_check, parse_runtime_descriptor, DimSpec, RuntimeDescriptor,
};
use vipios_oracle::{arb_runtime_descriptor, hpf_owners, hpf_rank_bytes};

fn view_bytes(rd: &RuntimeDescriptor, rank: u64) -> Vec<u64> {
    let v = build_process_view(rd, rank).unwrap();
    v.descriptor
        .enumerate_runs(0, 0, v.total_bytes)
        .into_iter()
        .flat_map(|r| r.file_offset..r.end())
        .collect()
}

fn agrees_with_simulator(rd: &RuntimeDescriptor) {
    let report = cover_check(rd);
    assert!(report.is_partition(), "{rd:?}: {report:?}");
    for rank in 0..rd.num_procs() {
        let expect = hpf_rank_bytes(rd, rank);
        let v = build_process_view(rd, rank).unwrap();
        assert_eq!(v.total_bytes, expect.len() as u64, "{rd:?} rank {rank}");
        assert_eq!(view_bytes(rd, rank), expect, "{rd:?} rank {rank}");
    }
}

#[test]
fn example_14x17_agrees_with_simulator() {
    let rd = parse_runtime_descriptor(&[2, 3, 4, 4, 4, 2, 14, -1, 2, 3, 17, -1, 1, 5]).unwrap();
    assert_eq!(
        rd.dims.iter().map(|d| d.global_len).collect::<Vec<_>>(),
        vec![14, 17]
    );
    assert_eq!(cover_check(&rd).ranks, 12);
    agrees_with_simulator(&rd);
}

#[test]
fn quarters_of_sixteen() {
    let rd = RuntimeDescriptor {
        grid: vec![4],
        elem_type_code: 4,
        elem_size: 4,
        dims: vec![DimSpec::block(16, 4)],
    };
    for rank in 0..4 {
        let b = view_bytes(&rd, rank);
        assert_eq!(b, (rank * 16..rank * 16 + 16).collect::<Vec<_>>());
    }
    agrees_with_simulator(&rd);
}

#[test]
fn fixed_corpus() {
    let mut n = 0;
    for g in [1u64, 5, 13, 24] {
        for p in 1..=4u64 {
            for arg in 1..=g {
                let cyc = RuntimeDescriptor {
                    grid: vec![p],
                    elem_type_code: 4,
                    elem_size: 4,
                    dims: vec![DimSpec::cyclic(g, arg)],
                };
                agrees_with_simulator(&cyc);
                n += 1;
                if arg * p >= g {
                    let blk = RuntimeDescriptor {
                        dims: vec![DimSpec::block(g, arg)],
                        ..cyc.clone()
                    };
                    agrees_with_simulator(&blk);
                    n += 1;
                }
            }
        }
    }
    assert!(n >= 50);
}

#[test]
fn cyclic_with_whole_length_is_block_on_first_coordinate() {
    for g in 1..=20u64 {
        for p in 1..=4u64 {
            let cyc = RuntimeDescriptor {
                grid: vec![p],
                elem_type_code: 1,
                elem_size: 1,
                dims: vec![DimSpec::cyclic(g, g)],
            };
            let blk = RuntimeDescriptor {
                dims: vec![DimSpec::block(g, g)],
                ..cyc.clone()
            };
            assert_eq!(hpf_owners(&cyc), hpf_owners(&blk));
            for rank in 0..p {
                assert_eq!(view_bytes(&cyc, rank), view_bytes(&blk, rank));
            }
            assert_eq!(view_bytes(&cyc, 0), (0..g).collect::<Vec<_>>());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn random_descriptors_partition(rd in arb_runtime_descriptor()) {
        let report = cover_check(&rd);
        prop_assert!(report.is_partition(), "{:?}: {:?}", rd, report);
        for rank in 0..rd.num_procs() {
            let expect = hpf_rank_bytes(&rd, rank);
            prop_assert_eq!(view_bytes(&rd, rank), expect);
        }
    }

    #[test]
    fn flat_layout_round_trips(rd in arb_runtime_descriptor()) {
        prop_assert_eq!(parse_runtime_descriptor(&rd.to_ints()).unwrap(), rd);
    }

    #[test]
    fn parse_never_panics(ints in prop::collection::vec(-3i64..30, 0..24)) {
        let _ = parse_runtime_descriptor(&ints);
    }
}
