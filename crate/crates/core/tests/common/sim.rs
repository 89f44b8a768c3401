//! Two-node simulated scenarios and a bare reflector rig.

use std::net::Ipv6Addr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use srv6_stamp::codec::{
    DatagramView, Envelope, ErrorEstimate, NtpTimestamp, PayloadKind, ReflectorTestPayload,
    SenderTestPayload, StampPayload, TestDatagram,
};
use srv6_stamp::reflector::SessionReflector;
use srv6_stamp::scenario::Scenario;
use srv6_stamp::session::{ReflectorMode, SessionConfig, Ssid};
use srv6_stamp::transport::{FilterSpec, SimLink, SimNetwork, Transport};

pub const MS: i64 = 1_000_000;

/// 5 ms towards the reflector, 7 ms back, 10 ms probe interval. `extra`
/// is spliced into the top-level object.
pub fn two_node(offset_ns: i64, probes: u64, extra: &str) -> Scenario {
    Scenario::from_json(&format!(
        r#"{{
            {extra}
            "nodes": [
                {{"name": "s", "addr": "fc00::1"}},
                {{"name": "r", "addr": "fc00::2", "clock_offset_ns": {offset_ns}}}
            ],
            "links": [
                {{"from": "s", "to": "r", "delay": {{"constant": {{"ns": 5000000}}}}}},
                {{"from": "r", "to": "s", "delay": {{"constant": {{"ns": 7000000}}}}}}
            ],
            "session": {{"sender": "s", "reflector": "r", "probes": {probes}, "interval_ns": 10000000}}
        }}"#
    ))
    .unwrap()
}

pub fn addr(i: u16) -> Ipv6Addr {
    Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, i)
}

pub fn probe(seq: u32, hop_limit: u8) -> Vec<u8> {
    TestDatagram {
        envelope: Envelope {
            hop_limit,
            ..Envelope::new(addr(1), addr(2))
        },
        payload: StampPayload::Sender(SenderTestPayload {
            sequence_number: seq,
            timestamp: NtpTimestamp::new(1, 0),
            error_estimate: ErrorEstimate::default(),
            ssid: 9,
        }),
    }
    .build()
    .unwrap()
}

/// A reflector on a lossless sim link whose replies are decoded at the
/// sender side.
pub fn reflector_rig(mode: ReflectorMode) -> (Arc<SimNetwork>, Arc<dyn Transport>, Arc<Mutex<Vec<ReflectorTestPayload>>>) {
    let net = SimNetwork::new(0);
    let s = net.add_endpoint(addr(1), 0);
    let r = net.add_endpoint(addr(2), 0);
    net.connect_both(addr(1), addr(2), SimLink::constant(Duration::from_millis(1)));
    let refl = SessionReflector::new(r.clone());
    let mut cfg = SessionConfig::new(Ssid::new(9).unwrap(), addr(1), addr(2), Duration::from_millis(1))
        .reflector_side(Vec::new());
    cfg.mode = mode;
    refl.create_session(cfg).unwrap();
    refl.start_session(9, None).unwrap();
    r.register(FilterSpec::new(Some(addr(2)), 862), refl).unwrap();
    let got = Arc::new(Mutex::new(Vec::new()));
    let g = got.clone();
    s.register(
        FilterSpec::new(Some(addr(1)), 862),
        Arc::new(move |d: &[u8]| {
            let p = TestDatagram::parse(d, PayloadKind::Reflector).unwrap();
            assert!(DatagramView::parse(d).unwrap().checksum_valid());
            if let StampPayload::Reflector(r) = p.datagram.payload {
                g.lock().unwrap().push(r);
            }
        }),
    )
    .unwrap();
    (net, s, got)
}


/// Replies received for `probes` of `(sequence, hop limit)` sent through a
/// reflector in `mode`.
pub fn reflect(mode: ReflectorMode, probes: &[(u32, u8)]) -> Vec<ReflectorTestPayload> {
    let (net, s, got) = reflector_rig(mode);
    for &(q, h) in probes {
        s.send(addr(2), &probe(q, h)).unwrap();
    }
    net.run_until_idle();
    let out = got.lock().unwrap().clone();
    out
}
