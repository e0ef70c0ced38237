//! Descriptor arithmetic against brute-force walks of the descriptor.

use proptest::prelude::*;
use vipios_core::datatypes::DatatypeTree as T;
use vipios_core::viewdesc::{
    build_descriptor, byte_to_etype, etype_to_byte, AccessDesc, BasicBlock, View, ViewError,
};
use vipios_core::BaseType;
use vipios_oracle::{arb_tree, expand_desc, expand_offsets, view_byte};

/// Two levels: 3 repetitions of 2 instances of {2 x 5 bytes, stride 5},
/// stride 20 between repetitions.
fn worked() -> AccessDesc {
    let inner = AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0);
    AccessDesc::new(vec![BasicBlock::nested(0, 3, 2, 20, inner)], 0)
}

#[test]
fn worked_example_counts_and_offsets() {
    let mut inner = AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0);
    assert_eq!(inner.fill_counts(), (15, 10));
    let mut d = worked();
    assert_eq!(d.fill_counts(), (130, 60));
    assert_eq!(d.absolute_offset(23), Some(53));
    let (bytes, extent) = expand_desc(&d);
    assert_eq!((bytes.len(), extent), (60, 130));
    assert_eq!(bytes[23], 53);
}

#[test]
fn circular_offset_follows_enumeration() {
    // The worked text computes 2 * 130 + 53 = 313 and then states 303.
    // Enumerating two full periods decides it.
    let d = worked();
    let (bytes, extent) = expand_desc(&d);
    let brute = view_byte(0, &bytes, extent, 143);
    assert_eq!(brute, 313);
    assert_eq!(d.absolute_offset(143), Some(brute));
}

#[test]
fn mapping_examples() {
    let (d, _) = build_descriptor(&T::hvector(2, 5, 40, T::Base(BaseType::Int))).unwrap();
    assert_eq!(d.blocks[0].stride, 20);
    let t = T::hindexed(vec![1, 2, 3], vec![0, 20, 40], T::Base(BaseType::Int));
    let (d, _) = build_descriptor(&t).unwrap();
    assert_eq!(d.blocks[2].offset, 12);
    let t = T::structure(
        vec![3, 2, 16],
        vec![0, 20, 60],
        vec![
            T::Base(BaseType::Int),
            T::Base(BaseType::Double),
            T::Base(BaseType::Char),
        ],
    );
    let (d, _) = build_descriptor(&t).unwrap();
    let offs: Vec<u64> = d.blocks.iter().map(|b| b.offset).collect();
    assert_eq!(offs, vec![0, 8, 24]);
}

#[test]
fn etype_conversion() {
    assert_eq!(byte_to_etype(80, BaseType::Double), Ok(10));
    assert_eq!(byte_to_etype(0, BaseType::Short), Ok(0));
    assert!(matches!(
        byte_to_etype(10, BaseType::Int),
        Err(ViewError::NotAligned { .. })
    ));
    assert_eq!(etype_to_byte(10, BaseType::Double), 80);
}

#[test]
fn vector_view_runs() {
    let v = View::new(
        0,
        BaseType::Byte,
        &T::vector(3, 2, 3, T::Base(BaseType::Byte)),
    )
    .unwrap();
    let r: Vec<(u64, u64)> = v
        .runs(0, 6)
        .iter()
        .map(|r| (r.file_offset, r.length))
        .collect();
    assert_eq!(r, vec![(0, 2), (3, 2), (6, 2)]);
    let r: Vec<(u64, u64)> = v
        .runs(1, 3)
        .iter()
        .map(|r| (r.file_offset, r.length))
        .collect();
    assert_eq!(r, vec![(1, 1), (3, 2)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn counts_match_walk(t in arb_tree(3, 4096)) {
        let (d, _) = build_descriptor(&t).unwrap();
        let (bytes, extent) = expand_desc(&d);
        prop_assert_eq!(d.total_actual(), bytes.len() as u64);
        prop_assert_eq!(d.total_extent(), extent);
        prop_assert_eq!(bytes, expand_offsets(&t));
    }

    #[test]
    fn absolute_offset_monotone_and_periodic(t in arb_tree(3, 2048), k in 0u64..10_000) {
        let (d, _) = build_descriptor(&t).unwrap();
        let a = d.total_actual();
        let k = k % (3 * a);
        let here = d.absolute_offset(k).unwrap();
        prop_assert_eq!(d.absolute_offset(k + a).unwrap(), here + d.total_extent());
        if k + 1 < 3 * a {
            prop_assert!(d.absolute_offset(k + 1).unwrap() > here);
        }
        let (bytes, extent) = expand_desc(&d);
        prop_assert_eq!(here, view_byte(0, &bytes, extent, k));
    }

    #[test]
    fn runs_cover_requested_bytes(t in arb_tree(3, 2048), disp in 0u64..100, start in 0u64..5000, len in 0u64..5000) {
        let (d, _) = build_descriptor(&t).unwrap();
        let runs = d.enumerate_runs(disp, start, len);
        prop_assert_eq!(runs.iter().map(|r| r.length).sum::<u64>(), len);
        for w in runs.windows(2) {
            prop_assert!(w[0].end() < w[1].file_offset);
        }
        let (bytes, extent) = expand_desc(&d);
        let flat: Vec<u64> = runs.iter().flat_map(|r| r.file_offset..r.end()).collect();
        let expect: Vec<u64> = (start..start + len).map(|k| view_byte(disp, &bytes, extent, k)).collect();
        prop_assert_eq!(flat, expect);
    }

    #[test]
    fn count_below_matches_walk(t in arb_tree(3, 2048), limit in 0u64..10_000) {
        let (d, _) = build_descriptor(&t).unwrap();
        let (bytes, extent) = expand_desc(&d);
        let mut n = 0;
        while view_byte(0, &bytes, extent, n) < limit {
            n += 1;
        }
        prop_assert_eq!(d.count_below(limit), n);
    }

    #[test]
    fn binary_form_round_trips(t in arb_tree(3, 4096)) {
        let (d, _) = build_descriptor(&t).unwrap();
        let bytes = d.encode();
        let (back, used) = AccessDesc::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, d);
    }

    #[test]
    fn descriptor_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = AccessDesc::decode(&bytes);
    }
}
