//! Generators and per-case checks shared by the property tests and the
//! acceptance run. Every check compares against byte layouts or means
//! computed here, not by the library.

use std::net::Ipv6Addr;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use srv6_stamp::analytics::WelfordState;
use srv6_stamp::codec::{
    Envelope, ErrorEstimate, NtpTimestamp, ReflectorTestPayload, SegmentRoutingHeader,
    SenderTestPayload, StampPayload, TestDatagram, MAX_SEGMENTS,
};
use srv6_stamp::sender::PacketTemplate;

pub fn ts() -> impl Strategy<Value = NtpTimestamp> {
    (any::<u32>(), any::<u32>()).prop_map(|(s, f)| NtpTimestamp::new(s, f))
}

pub fn ee() -> impl Strategy<Value = ErrorEstimate> {
    (any::<bool>(), any::<bool>(), 0u8..=63, 1u8..=255).prop_map(|(s, z, scale, m)| ErrorEstimate {
        synchronized: s,
        ptp_format: z,
        scale,
        multiplier: m,
    })
}

pub fn sender_payload() -> impl Strategy<Value = SenderTestPayload> {
    (any::<u32>(), ts(), ee(), 1u16..).prop_map(|(seq, t, e, ssid)| SenderTestPayload {
        sequence_number: seq,
        timestamp: t,
        error_estimate: e,
        ssid,
    })
}

pub fn reflector_payload() -> impl Strategy<Value = ReflectorTestPayload> {
    (
        (any::<u32>(), ts(), ee(), ts(), 1u16..),
        (any::<u32>(), ts(), ee(), any::<u8>()),
    )
        .prop_map(|((seq, t3, e, t2, ssid), (sseq, t1, se, ttl))| ReflectorTestPayload {
            sequence_number: seq,
            timestamp: t3,
            error_estimate: e,
            receive_timestamp: t2,
            ssid,
            sender_sequence_number: sseq,
            sender_timestamp: t1,
            sender_error_estimate: se,
            sender_ttl: ttl,
        })
}

pub fn addr() -> impl Strategy<Value = Ipv6Addr> {
    any::<u128>().prop_map(Ipv6Addr::from)
}

pub fn srh() -> impl Strategy<Value = SegmentRoutingHeader> {
    prop::collection::vec(addr(), 1..=MAX_SEGMENTS).prop_flat_map(|segs| {
        let n = segs.len() as u8;
        (Just(segs), 0..n, any::<u8>(), any::<u16>()).prop_map(|(segments, sl, flags, tag)| {
            SegmentRoutingHeader {
                next_header: 17,
                segments_left: sl,
                flags,
                tag,
                segments,
            }
        })
    })
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (
        addr(),
        addr(),
        any::<u8>(),
        0u32..(1 << 20),
        any::<u8>(),
        prop::option::of(srh()),
        any::<u16>(),
        any::<u16>(),
    )
        .prop_map(|(src, dst, tc, fl, hl, srh, sp, dp)| Envelope {
            src_addr: src,
            dst_addr: dst,
            traffic_class: tc,
            flow_label: fl,
            hop_limit: hl,
            srh,
            src_port: sp,
            dst_port: dp,
        })
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

fn ts_at(b: &[u8], at: usize) -> NtpTimestamp {
    NtpTimestamp::new(be32(b, at), be32(b, at + 4))
}

fn ee_bits(e: ErrorEstimate) -> u16 {
    (e.synchronized as u16) << 15 | (e.ptp_format as u16) << 14 | (e.scale as u16) << 8 | e.multiplier as u16
}

pub fn sender_roundtrip(p: SenderTestPayload) -> Result<(), TestCaseError> {
    let b = p.encode().map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(b.len(), 44);
    prop_assert_eq!(be32(&b, 0), p.sequence_number);
    prop_assert_eq!(ts_at(&b, 4), p.timestamp);
    prop_assert_eq!(be16(&b, 12), ee_bits(p.error_estimate));
    prop_assert_eq!(be16(&b, 14), p.ssid);
    prop_assert!(b[16..].iter().all(|&x| x == 0));
    let d = SenderTestPayload::decode(&b).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(!d.mbz_nonzero);
    prop_assert_eq!(d.payload, p);
    Ok(())
}

pub fn reflector_roundtrip(p: ReflectorTestPayload) -> Result<(), TestCaseError> {
    let b = p.encode().map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(b.len(), 44);
    prop_assert_eq!(be32(&b, 0), p.sequence_number);
    prop_assert_eq!(ts_at(&b, 4), p.timestamp);
    prop_assert_eq!(be16(&b, 12), ee_bits(p.error_estimate));
    prop_assert_eq!(be16(&b, 14), p.ssid);
    prop_assert_eq!(ts_at(&b, 16), p.receive_timestamp);
    prop_assert_eq!(be32(&b, 24), p.sender_sequence_number);
    prop_assert_eq!(ts_at(&b, 28), p.sender_timestamp);
    prop_assert_eq!(be16(&b, 36), ee_bits(p.sender_error_estimate));
    prop_assert_eq!(b[40], p.sender_ttl);
    prop_assert!(b[38..40].iter().chain(&b[41..]).all(|&x| x == 0));
    let d = ReflectorTestPayload::decode(&b).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(!d.mbz_nonzero);
    prop_assert_eq!(d.payload, p);
    Ok(())
}

pub fn srh_roundtrip(s: SegmentRoutingHeader) -> Result<(), TestCaseError> {
    let b = s.encode().map_err(|e| TestCaseError::fail(e.to_string()))?;
    let n = s.segments.len();
    prop_assert_eq!(b.len(), 8 + 16 * n);
    prop_assert_eq!(b[1] as usize, 2 * n);
    prop_assert_eq!(b[2], 4);
    prop_assert_eq!(b[3], s.segments_left);
    prop_assert_eq!(b[4] as usize, n - 1);
    // Wire order is reversed: the last path segment comes first.
    prop_assert_eq!(&b[8..24], &s.segments[n - 1].octets()[..]);
    let (back, used) = SegmentRoutingHeader::decode(&b).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(used, b.len());
    prop_assert_eq!(back, s);
    Ok(())
}

/// A patched template must be byte-identical to encoding the whole
/// datagram from scratch.
pub fn template_matches_full_encode(
    env: Envelope,
    p: SenderTestPayload,
    seq: u32,
    t1: NtpTimestamp,
) -> Result<(), TestCaseError> {
    let tpl = PacketTemplate::new(&env, p).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let full = TestDatagram {
        envelope: env,
        payload: StampPayload::Sender(SenderTestPayload {
            sequence_number: seq,
            timestamp: t1,
            ..p
        }),
    }
    .build()
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(tpl.render(seq, t1), full);
    Ok(())
}

pub fn template_tuple() -> impl Strategy<Value = (Envelope, SenderTestPayload, u32, NtpTimestamp)> {
    (envelope(), sender_payload(), any::<u32>(), ts())
}

/// Largest relative error of the running averages against exact batch
/// means (sums in i128, one division).
pub fn welford_rel_error(samples: &[(i64, i64)]) -> f64 {
    let mut w = WelfordState::default();
    for &(d, r) in samples {
        w.update(d, r);
    }
    let n = samples.len() as f64;
    let sd: i128 = samples.iter().map(|s| s.0 as i128).sum();
    let sr: i128 = samples.iter().map(|s| s.1 as i128).sum();
    let rel = |got: f64, want: f64| ((got - want) / want.abs().max(1.0)).abs();
    rel(w.avg_d().unwrap(), sd as f64 / n).max(rel(w.avg_r().unwrap(), sr as f64 / n))
}

/// Delay-like samples: a base of a few ms plus jitter, occasionally
/// negative, seeded.
pub fn delay_samples(n: usize, seed: u64) -> Vec<(i64, i64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (
                5_000_000 + rng.random_range(-6_000_000i64..=6_000_000),
                7_000_000 + rng.random_range(-2_000_000i64..=50_000_000),
            )
        })
        .collect()
}

/// Runs `test` on `cases` generated inputs with a fixed seed.
pub fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}
