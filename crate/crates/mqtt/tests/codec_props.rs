use proptest::prelude::*;
use sls_mqtt::codec::{
    decode, decode_varint, encode, encode_varint, Connect, Decoded, Packet, StreamDecoder,
    MAX_REMAINING_LENGTH,
};

/// Independent varint oracle: minimal base-128 digits, least significant first.
fn oracle_varint(mut n: usize) -> Vec<u8> {
    let mut digits = Vec::new();
    loop {
        digits.push((n & 0x7F) as u8);
        n >>= 7;
        if n == 0 {
            break;
        }
    }
    let last = digits.len() - 1;
    digits
        .iter()
        .enumerate()
        .map(|(i, d)| if i < last { d | 0x80 } else { *d })
        .collect()
}

fn topic_level() -> impl Strategy<Value = String> {
    "[a-z0-9_\\-]{1,8}"
}

fn topic() -> impl Strategy<Value = String> {
    proptest::collection::vec(topic_level(), 1..6)
        .prop_map(|levels| levels.join("/"))
        .prop_filter("1-64 bytes", |t| (1..=64).contains(&t.len()))
}

fn unicode_topic() -> impl Strategy<Value = String> {
    "[^+#/\u{0}]{1,20}"
}

fn arb_packet() -> impl Strategy<Value = Packet> {
    prop_oneof![
        ("[a-zA-Z0-9\\-]{0,23}", any::<u16>(), any::<bool>()).prop_map(
            |(client_id, keep_alive, clean_session)| {
                Packet::Connect(Connect {
                    client_id,
                    keep_alive,
                    clean_session,
                })
            }
        ),
        (any::<bool>(), 0u8..6).prop_map(|(session_present, return_code)| Packet::ConnAck {
            session_present,
            return_code
        }),
        (
            prop_oneof![topic(), unicode_topic()],
            proptest::collection::vec(any::<u8>(), 0..=256)
        )
            .prop_map(|(t, p)| Packet::publish(t, p)),
        (
            any::<u16>(),
            proptest::collection::vec((topic(), 0u8..3), 1..4)
        )
            .prop_map(|(packet_id, filters)| Packet::Subscribe { packet_id, filters }),
        (
            any::<u16>(),
            proptest::collection::vec(prop_oneof![Just(0u8), Just(1), Just(2), Just(0x80)], 1..4)
        )
            .prop_map(|(packet_id, return_codes)| Packet::SubAck {
                packet_id,
                return_codes
            }),
        Just(Packet::PingReq),
        Just(Packet::PingResp),
        Just(Packet::Disconnect),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip(p in arb_packet()) {
        let bytes = encode(&p).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), Decoded::Packet(p, bytes.len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn varint_matches_oracle(n in 0usize..=MAX_REMAINING_LENGTH) {
        let mut out = Vec::new();
        encode_varint(n, &mut out).unwrap();
        prop_assert_eq!(&out, &oracle_varint(n));
        prop_assert!((1..=4).contains(&out.len()));
        prop_assert_eq!(decode_varint(&out).unwrap(), Some((n, out.len())));
    }

    #[test]
    fn byte_at_a_time_equals_whole_buffer(packets in proptest::collection::vec(arb_packet(), 1..6)) {
        let stream: Vec<u8> = packets.iter().flat_map(|p| encode(p).unwrap()).collect();

        let mut whole = StreamDecoder::new();
        whole.push(&stream);
        let mut a = Vec::new();
        while let Some(p) = whole.next_packet().unwrap() {
            a.push(p);
        }

        let mut drip = StreamDecoder::new();
        let mut b = Vec::new();
        for byte in &stream {
            drip.push(std::slice::from_ref(byte));
            while let Some(p) = drip.next_packet().unwrap() {
                b.push(p);
            }
        }
        prop_assert_eq!(&a, &packets);
        prop_assert_eq!(&b, &packets);
        prop_assert_eq!(drip.buffered(), 0);
    }

    #[test]
    fn prefixes_never_decode_to_a_packet(p in arb_packet()) {
        let bytes = encode(&p).unwrap();
        for cut in 1..bytes.len() {
            match decode(&bytes[..cut]).unwrap() {
                Decoded::NeedMoreBytes(n) => prop_assert!(n > cut && n <= bytes.len()),
                Decoded::Packet(..) => prop_assert!(false, "prefix of {} bytes decoded", cut),
            }
        }
    }

    #[test]
    fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode(&bytes);
    }
}

#[test]
fn varint_boundaries() {
    for n in [
        0,
        127,
        128,
        16_383,
        16_384,
        2_097_151,
        2_097_152,
        MAX_REMAINING_LENGTH,
    ] {
        let mut out = Vec::new();
        encode_varint(n, &mut out).unwrap();
        assert_eq!(out, oracle_varint(n), "{n}");
    }
}

#[test]
fn non_minimal_four_byte_varint_decodes() {
    // 0 padded to four bytes; still within the length limit.
    assert_eq!(
        decode_varint(&[0x80, 0x80, 0x80, 0x00]).unwrap(),
        Some((0, 4))
    );
}
