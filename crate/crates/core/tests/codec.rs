use gra_core::protocol::frame::{
    parse_frame, AggregatedFrame, DataRecord, Direction, FrameHeader, SignalingKind, SignalingMessage, HEADER_LEN,
};
use gra_core::rng::stream;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const UPLINK: [SignalingKind; 3] = [SignalingKind::LeaveRequest, SignalingKind::LinkReport, SignalingKind::JoinRequest];
const DOWNLINK: [SignalingKind; 3] = [SignalingKind::Ack, SignalingKind::UpdateCommand, SignalingKind::JoinCommand];

fn random_frame(rng: &mut impl Rng) -> AggregatedFrame {
    let direction = if rng.gen() { Direction::Uplink } else { Direction::Downlink };
    let kinds = if direction == Direction::Uplink { &UPLINK } else { &DOWNLINK };
    let signaling = (0..rng.gen_range(0..8))
        .map(|_| {
            let detail = (0..rng.gen_range(0..12)).map(|_| rng.gen()).collect();
            SignalingMessage::new(*kinds.choose(rng).unwrap(), rng.gen(), detail)
        })
        .collect();
    let data = (0..rng.gen_range(0..20))
        .map(|_| DataRecord { device: rng.gen(), payload: (0..rng.gen_range(0..130)).map(|_| rng.gen()).collect() })
        .collect();
    AggregatedFrame { header: FrameHeader { group_id: rng.gen(), cycle_seq: rng.gen(), direction }, signaling, data }
}

fn mutate(bytes: &mut Vec<u8>, rng: &mut impl Rng) {
    match rng.gen_range(0..5) {
        0 if !bytes.is_empty() => {
            let i = rng.gen_range(0..bytes.len());
            bytes[i] ^= 1 << rng.gen_range(0..8);
        }
        1 if !bytes.is_empty() => {
            let i = rng.gen_range(0..bytes.len());
            bytes[i] = rng.gen();
        }
        2 => bytes.truncate(rng.gen_range(0..=bytes.len())),
        3 => {
            let i = rng.gen_range(0..=bytes.len());
            bytes.insert(i, rng.gen());
        }
        _ if !bytes.is_empty() => {
            let i = rng.gen_range(0..bytes.len());
            bytes.remove(i);
        }
        _ => bytes.push(rng.gen()),
    }
}

#[test]
fn ten_thousand_random_frames_round_trip() {
    let mut rng = stream(61, "codec-fuzz");
    for i in 0..10_000 {
        let f = random_frame(&mut rng);
        let bytes = f.encode().unwrap();
        assert_eq!(bytes.len(), f.encoded_len());
        assert_eq!(parse_frame(&bytes).unwrap(), f, "frame {i}");
        assert_eq!(parse_frame(&bytes).unwrap().encode().unwrap(), bytes);
    }
}

#[test]
fn mutated_bytes_reencode_or_fail_with_offset() {
    let mut rng = stream(62, "codec-mutate");
    let (mut ok, mut failed) = (0, 0);
    for _ in 0..1_000 {
        let mut bytes = random_frame(&mut rng).encode().unwrap();
        for _ in 0..rng.gen_range(1..4) {
            mutate(&mut bytes, &mut rng);
        }
        match parse_frame(&bytes) {
            Ok(f) => {
                assert_eq!(f.encode().unwrap(), bytes);
                ok += 1;
            }
            Err(e) => {
                assert!(e.offset <= bytes.len(), "{e} for {} bytes", bytes.len());
                failed += 1;
            }
        }
    }
    assert!(ok > 0 && failed > 0, "{ok} parsed, {failed} rejected");
}

#[test]
fn header_only_frame_is_a_keep_alive() {
    let f = AggregatedFrame::empty(Direction::Uplink, 3, 9);
    let bytes = f.encode().unwrap();
    assert_eq!(bytes.len(), HEADER_LEN);
    assert_eq!(bytes, [0, 0, 0, 3, 0, 0, 0, 9, 0, 0, 0, 0, 0]);
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        match parse_frame(&bytes) {
            Ok(f) => prop_assert_eq!(f.encode().unwrap(), bytes),
            Err(e) => prop_assert!(e.offset <= bytes.len()),
        }
    }

    #[test]
    fn round_trip(seed in any::<u64>()) {
        let f = random_frame(&mut stream(seed, "codec-prop"));
        prop_assert_eq!(parse_frame(&f.encode().unwrap()).unwrap(), f);
    }
}
