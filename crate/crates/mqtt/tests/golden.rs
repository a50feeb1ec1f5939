use sls_mqtt::codec::{decode, decode_varint, encode, encode_varint, Connect, Decoded, Packet};

fn vectors() -> Vec<(String, Vec<u8>)> {
    include_str!("golden/vectors.txt")
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut parts = l.split_whitespace();
            let name = parts.next().unwrap().to_owned();
            let bytes = parts.map(|h| u8::from_str_radix(h, 16).unwrap()).collect();
            (name, bytes)
        })
        .collect()
}

fn packet_for(name: &str) -> Packet {
    match name {
        "connect_sls_ctl_ka60" => Packet::Connect(Connect {
            client_id: "sls-ctl".into(),
            keep_alive: 60,
            clean_session: true,
        }),
        "connack_accepted" => Packet::ConnAck {
            session_present: false,
            return_code: 0,
        },
        "publish_trigger_on" => Packet::publish("sls/trigger", b"ON".to_vec()),
        "publish_trigger_off" => Packet::publish("sls/trigger", b"OFF".to_vec()),
        "subscribe_trigger_id1" => Packet::Subscribe {
            packet_id: 1,
            filters: vec![("sls/trigger".into(), 0)],
        },
        "suback_id1_granted" => Packet::SubAck {
            packet_id: 1,
            return_codes: vec![0],
        },
        "pingreq" => Packet::PingReq,
        "pingresp" => Packet::PingResp,
        "disconnect" => Packet::Disconnect,
        other => panic!("no packet for vector {other}"),
    }
}

#[test]
fn golden_vectors_match_bit_exactly() {
    let vs = vectors();
    assert_eq!(vs.len(), 18);
    for (name, bytes) in vs {
        if let Some(n) = name.strip_prefix("varint_") {
            let n: usize = n.parse().unwrap();
            let mut out = Vec::new();
            encode_varint(n, &mut out).unwrap();
            assert_eq!(out, bytes, "{name}");
            assert_eq!(
                decode_varint(&bytes).unwrap(),
                Some((n, bytes.len())),
                "{name}"
            );
        } else {
            let p = packet_for(&name);
            assert_eq!(encode(&p).unwrap(), bytes, "{name}");
            assert_eq!(
                decode(&bytes).unwrap(),
                Decoded::Packet(p, bytes.len()),
                "{name}"
            );
        }
    }
}

#[test]
fn publish_on_layout() {
    let bytes = encode(&Packet::publish("sls/trigger", b"ON".to_vec())).unwrap();
    assert_eq!(bytes[0], 0x30);
    assert_eq!(&bytes[2..4], &[0x00, 0x0B]);
    assert_eq!(&bytes[4..15], b"sls/trigger");
    assert_eq!(&bytes[15..], &[0x4F, 0x4E]);
}

#[test]
fn partial_packet_reports_total_needed() {
    // Topic "a" plus a 5-byte payload: 2 + 1 + 5 = 8 remaining, 10 in total.
    let bytes = encode(&Packet::publish("a", b"hello".to_vec())).unwrap();
    assert_eq!(bytes.len(), 10);
    match decode(&bytes[..2]).unwrap() {
        Decoded::NeedMoreBytes(n) => assert!(n >= 10),
        other => panic!("expected NeedMoreBytes, got {other:?}"),
    }
}

#[test]
fn overlong_length_is_malformed() {
    assert!(decode(&[0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF]).is_err());
}
