//! Loader and checker for the golden vectors in `vectors/`.

use std::net::Ipv6Addr;
use std::path::PathBuf;

use serde_json::Value;
use srv6_stamp::codec::{
    CodecError, NtpTimestamp, PayloadKind, ReflectorTestPayload, SegmentRoutingHeader,
    SenderTestPayload, StampPayload, TestDatagram,
};

pub struct Vector {
    pub name: String,
    pub kind: String,
    pub bytes: Vec<u8>,
    pub expect: Option<Value>,
    pub error: Option<String>,
}

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../vectors")
}

fn unhex(s: &str) -> Vec<u8> {
    let digits: Vec<u8> = s.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).unwrap(), 16).unwrap())
        .collect()
}

pub fn load_all() -> Vec<Vector> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir())
        .expect("vectors directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        out.push(Vector {
            name: p.file_stem().unwrap().to_string_lossy().into_owned(),
            kind: v["kind"].as_str().unwrap().to_owned(),
            bytes: unhex(v["hex"].as_str().unwrap()),
            expect: v.get("expect").cloned(),
            error: v.get("error").and_then(|e| e.as_str()).map(str::to_owned),
        });
    }
    out
}

fn error_name(e: &CodecError) -> &'static str {
    match e {
        CodecError::TooShort { .. } => "TooShort",
        CodecError::SsidZero => "SsidZero",
        CodecError::BadErrorEstimate(_) => "BadErrorEstimate",
        CodecError::EmptySegmentList => "EmptySegmentList",
        CodecError::TooManySegments(_) => "TooManySegments",
        CodecError::SegmentsLeftOutOfRange { .. } => "SegmentsLeftOutOfRange",
        CodecError::LenMismatch { .. } => "LenMismatch",
        CodecError::UnsupportedRoutingType(_) => "UnsupportedRoutingType",
        CodecError::NotIpv6 => "NotIpv6",
        CodecError::UnsupportedNextHeader(_) => "UnsupportedNextHeader",
        CodecError::FieldRange(_) => "FieldRange",
        CodecError::ChecksumMismatch { .. } => "ChecksumMismatch",
    }
}

fn ts(v: &Value) -> NtpTimestamp {
    NtpTimestamp::new(v[0].as_u64().unwrap() as u32, v[1].as_u64().unwrap() as u32)
}

fn u(v: &Value, k: &str) -> u64 {
    v[k].as_u64().unwrap_or_else(|| panic!("missing {k}"))
}

fn addrs(v: &Value) -> Vec<Ipv6Addr> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().parse().unwrap())
        .collect()
}

fn check_sender(p: &SenderTestPayload, mbz: bool, e: &Value) -> Result<(), String> {
    let ok = p.sequence_number as u64 == u(e, "sequence_number")
        && p.timestamp == ts(&e["timestamp"])
        && p.error_estimate.to_bits() as u64 == u(e, "error_estimate_bits")
        && p.ssid as u64 == u(e, "ssid")
        && mbz == e["mbz_nonzero"].as_bool().unwrap();
    ok.then_some(()).ok_or_else(|| format!("sender fields differ: {p:?} mbz={mbz}"))
}

fn check_reflector(p: &ReflectorTestPayload, mbz: bool, e: &Value) -> Result<(), String> {
    let ok = p.sequence_number as u64 == u(e, "sequence_number")
        && p.timestamp == ts(&e["timestamp"])
        && p.error_estimate.to_bits() as u64 == u(e, "error_estimate_bits")
        && p.ssid as u64 == u(e, "ssid")
        && p.receive_timestamp == ts(&e["receive_timestamp"])
        && p.sender_sequence_number as u64 == u(e, "sender_sequence_number")
        && p.sender_timestamp == ts(&e["sender_timestamp"])
        && p.sender_error_estimate.to_bits() as u64 == u(e, "sender_error_estimate_bits")
        && p.sender_ttl as u64 == u(e, "sender_ttl")
        && mbz == e["mbz_nonzero"].as_bool().unwrap();
    ok.then_some(()).ok_or_else(|| format!("reflector fields differ: {p:?} mbz={mbz}"))
}

fn outcome<T>(r: Result<T, CodecError>, v: &Vector, check: impl FnOnce(T, &Value) -> Result<(), String>) -> Result<(), String> {
    match (r, &v.error, &v.expect) {
        (Err(e), Some(want), _) if error_name(&e) == want => Ok(()),
        (Err(e), Some(want), _) => Err(format!("expected {want}, got {e:?}")),
        (Err(e), None, _) => Err(format!("unexpected error {e:?}")),
        (Ok(_), Some(want), _) => Err(format!("expected {want}, decoded fine")),
        (Ok(x), None, Some(exp)) => check(x, exp),
        (Ok(_), None, None) => Err("vector has neither expect nor error".into()),
    }
}

/// Decodes one vector and compares against its expectation. Valid vectors
/// without MBZ bits must also re-encode to the same bytes.
pub fn check(v: &Vector) -> Result<(), String> {
    let b = &v.bytes;
    match v.kind.as_str() {
        "sender_payload" => outcome(SenderTestPayload::decode(b), v, |d, e| {
            check_sender(&d.payload, d.mbz_nonzero, e)?;
            if !d.mbz_nonzero && d.payload.encode().map_err(|e| e.to_string())?[..] != b[..] {
                return Err("re-encode differs".into());
            }
            Ok(())
        }),
        "reflector_payload" => outcome(ReflectorTestPayload::decode(b), v, |d, e| {
            check_reflector(&d.payload, d.mbz_nonzero, e)?;
            if !d.mbz_nonzero && d.payload.encode().map_err(|e| e.to_string())?[..] != b[..] {
                return Err("re-encode differs".into());
            }
            Ok(())
        }),
        "srh" => outcome(SegmentRoutingHeader::decode(b), v, |(s, used), e| {
            let ok = used == b.len()
                && s.next_header as u64 == u(e, "next_header")
                && s.segments_left as u64 == u(e, "segments_left")
                && s.last_entry() as u64 == u(e, "last_entry")
                && s.flags as u64 == u(e, "flags")
                && s.tag as u64 == u(e, "tag")
                && s.segments == addrs(&e["segments"]);
            if !ok {
                return Err(format!("srh differs: {s:?}"));
            }
            (s.encode().map_err(|e| e.to_string())? == *b)
                .then_some(())
                .ok_or_else(|| "re-encode differs".into())
        }),
        "datagram_sender" | "datagram_reflector" => {
            let kind = if v.kind == "datagram_sender" {
                PayloadKind::Sender
            } else {
                PayloadKind::Reflector
            };
            outcome(TestDatagram::parse(b, kind), v, |p, e| {
                let env = &p.datagram.envelope;
                let segs = env.srh.as_ref().map(|s| s.segments.clone()).unwrap_or_default();
                let sl = env.srh.as_ref().map_or(0, |s| s.segments_left);
                let ok = env.src_addr.to_string() == e["src_addr"].as_str().unwrap()
                    && env.dst_addr.to_string() == e["dst_addr"].as_str().unwrap()
                    && env.hop_limit as u64 == u(e, "hop_limit")
                    && env.src_port as u64 == u(e, "src_port")
                    && env.dst_port as u64 == u(e, "dst_port")
                    && u16::from_be_bytes([b[b.len() - 46], b[b.len() - 45]]) as u64 == u(e, "checksum")
                    && segs == addrs(&e["segments"])
                    && sl as u64 == u(e, "segments_left");
                if !ok {
                    return Err(format!("envelope differs: {env:?}"));
                }
                match &p.datagram.payload {
                    StampPayload::Sender(s) => check_sender(s, p.mbz_nonzero, &e["payload"])?,
                    StampPayload::Reflector(r) => check_reflector(r, p.mbz_nonzero, &e["payload"])?,
                }
                (p.datagram.build().map_err(|e| e.to_string())? == *b)
                    .then_some(())
                    .ok_or_else(|| "rebuild differs".into())
            })
        }
        other => Err(format!("unknown vector kind {other}")),
    }
}
