//! Codec totality and round trips.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use vipios_core::protocol::{CodecError, Message, MsgClass, MsgType, HEADER_LEN, MAGIC};

fn arb_message() -> impl Strategy<Value = Message> {
    (
        prop::sample::select(MsgType::ALL.to_vec()),
        prop::sample::select(MsgClass::ALL.to_vec()),
        any::<[u32; 5]>(),
        any::<i32>(),
        prop::collection::vec(any::<u8>(), 0..64),
        prop::collection::vec(any::<u8>(), 0..256),
    )
        .prop_map(|(t, c, ids, status, params, data)| Message {
            msg_type: t,
            class: c,
            sender: ids[0],
            recipient: ids[1],
            client: ids[2],
            file: ids[3],
            request: ids[4],
            status,
            params,
            data,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_identity(m in arb_message(), tail in prop::collection::vec(any::<u8>(), 0..8)) {
        let mut bytes = m.encode();
        prop_assert_eq!(bytes.len(), HEADER_LEN + m.params.len() + m.data.len());
        let n = bytes.len();
        bytes.extend(tail);
        let (back, used) = Message::decode_prefix(&bytes).unwrap();
        prop_assert_eq!(used, n);
        prop_assert_eq!(back, m);
    }
}

#[test]
fn random_frames_decode_or_fail_cleanly() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut ok = 0;
    for i in 0..100_000 {
        let len = rng.gen_range(0..128);
        let mut buf: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        // bias half the frames towards plausible headers so decoding gets past the magic
        if i % 2 == 0 && buf.len() >= 44 {
            buf[..4].copy_from_slice(&MAGIC);
            buf[4..8].copy_from_slice(&rng.gen_range(0u32..18).to_le_bytes());
            buf[8..12].copy_from_slice(&rng.gen_range(0u32..5).to_le_bytes());
            buf[36..40].copy_from_slice(&rng.gen_range(0u32..50).to_le_bytes());
            buf[40..44].copy_from_slice(&rng.gen_range(0u32..50).to_le_bytes());
        }
        match Message::decode(&buf) {
            Ok(_) => ok += 1,
            Err(CodecError::BadMagic | CodecError::Truncated | CodecError::UnknownType(_)) => {}
        }
    }
    assert!(ok > 0);
}
