mod common;

use std::collections::BTreeSet;

use common::sim::{addr, probe, reflect, two_node, MS};
use srv6_stamp::analytics::delays;
use srv6_stamp::scenario::Scenario;
use srv6_stamp::session::ReflectorMode;
use srv6_stamp::transport::{SimLink, SimNetwork, Transport};

#[test]
fn constant_delays_are_measured_exactly() {
    let rep = two_node(0, 100, "").run().unwrap();
    assert_eq!(rep.probes_sent, 100);
    assert_eq!(rep.records.len(), 100);
    for (i, r) in rep.records.iter().enumerate() {
        assert_eq!(r.sender_seq, i as u32);
        assert_eq!(delays(r), (5 * MS, 7 * MS));
    }
    let s = rep.summary.unwrap();
    assert_eq!((s.avg_d_ns, s.avg_r_ns), (5e6, 7e6));
}

#[test]
fn reflector_offset_moves_delay_between_directions() {
    for o in [-3 * MS, 2 * MS] {
        let rep = two_node(o, 50, "").run().unwrap();
        assert_eq!(rep.records.len(), 50);
        for r in &rep.records {
            let (d, rt) = delays(r);
            assert_eq!(d - 5 * MS, o);
            assert_eq!(7 * MS - rt, o);
            assert_eq!(d + rt, 12 * MS);
        }
    }
}

#[test]
fn seeded_loss_is_deterministic() {
    let lossy = |seed: u64| {
        Scenario::from_json(&format!(
            r#"{{
                "seed": {seed},
                "nodes": [{{"name": "s", "addr": "fc00::1"}}, {{"name": "r", "addr": "fc00::2"}}],
                "links": [{{"from": "s", "to": "r", "delay": {{"constant": {{"ns": 1000000}}}},
                            "loss_prob": 0.1, "bidirectional": true}}],
                "session": {{"sender": "s", "reflector": "r", "probes": 100, "interval_ns": 10000000}}
            }}"#
        ))
        .unwrap()
        .run()
        .unwrap()
    };
    let a = lossy(7);
    let b = lossy(7);
    assert_eq!(a.records, b.records);
    // Two independent 10% losses per probe: about 81 survive.
    let n = a.records.len();
    assert!((65..=95).contains(&n), "{n}");
    assert_eq!(a.lost(), 100 - n as u64);
}

#[test]
fn segment_lists_accumulate_per_hop_delay() {
    let rep = Scenario::from_json(
        r#"{
            "nodes": [
                {"name": "s", "addr": "fc00::1"},
                {"name": "r", "addr": "fc00::2"},
                {"name": "t1", "addr": "fc00::a"},
                {"name": "t2", "addr": "fc00::b"}
            ],
            "links": [
                {"from": "s", "to": "t1", "delay": {"constant": {"ns": 2000000}}},
                {"from": "t1", "to": "r", "delay": {"constant": {"ns": 3000000}}},
                {"from": "r", "to": "t2", "delay": {"constant": {"ns": 4000000}}},
                {"from": "t2", "to": "s", "delay": {"constant": {"ns": 3000000}}}
            ],
            "session": {"sender": "s", "reflector": "r", "probes": 10, "interval_ns": 10000000,
                        "direct_sids": ["t1", "r"], "return_sids": ["t2"]}
        }"#,
    )
    .unwrap()
    .run()
    .unwrap();
    assert_eq!(rep.configured_d_ns, Some(5e6));
    assert_eq!(rep.configured_r_ns, Some(7e6));
    assert_eq!(rep.records.len(), 10);
    for r in &rep.records {
        assert_eq!(delays(r), (5 * MS, 7 * MS));
        // One forwarding hop before the reflector.
        assert_eq!(r.sender_ttl, 63);
    }
}

#[test]
fn missing_link_loses_everything() {
    let mut sc = two_node(0, 5, "");
    sc.links.pop();
    let rep = sc.run().unwrap();
    assert_eq!(rep.probes_sent, 5);
    assert!(rep.records.is_empty());
    assert_eq!(rep.configured_r_ns, None);
}

#[test]
fn stateless_reflector_echoes_sequences_bijectively() {
    let seqs: Vec<u32> = (0..500).map(|i| i * 7919 % 100_003).collect();
    let probes: Vec<(u32, u8)> = seqs.iter().map(|&q| (q, 64)).collect();
    let got = reflect(ReflectorMode::Stateless, &probes);
    assert_eq!(got.len(), seqs.len());
    let echoed: BTreeSet<u32> = got.iter().map(|r| r.sequence_number).collect();
    assert_eq!(echoed, seqs.iter().copied().collect());
    assert!(got.iter().all(|r| r.sequence_number == r.sender_sequence_number));
}

#[test]
fn stateful_reflector_counts_from_zero() {
    let sent = [900u32, 5, 5, 77, u32::MAX];
    let probes: Vec<(u32, u8)> = sent.iter().map(|&q| (q, 64)).collect();
    let got = reflect(ReflectorMode::Stateful, &probes);
    let own: Vec<u32> = got.iter().map(|r| r.sequence_number).collect();
    assert_eq!(own, vec![0, 1, 2, 3, 4]);
    let theirs: Vec<u32> = got.iter().map(|r| r.sender_sequence_number).collect();
    assert_eq!(theirs, sent);
}

#[test]
fn sender_ttl_reports_received_hop_limit() {
    let got = reflect(ReflectorMode::Stateless, &[(1, 1), (64, 64), (255, 255)]);
    let ttls: Vec<u8> = got.iter().map(|r| r.sender_ttl).collect();
    assert_eq!(ttls, vec![1, 64, 255]);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let trace = |seed| {
        let net = SimNetwork::new(seed);
        net.enable_trace();
        let a = net.add_endpoint(addr(1), 0);
        net.add_endpoint(addr(2), 0);
        net.connect(
            addr(1),
            addr(2),
            SimLink {
                delay: srv6_stamp::transport::DelayModel::Uniform {
                    min_ns: 1_000_000,
                    max_ns: 9_000_000,
                },
                loss_prob: 0.2,
                reorder: true,
            },
        );
        for i in 0..200 {
            a.send(addr(2), &probe(i, 64)).unwrap();
        }
        net.run_until_idle();
        net.trace()
    };
    assert_eq!(trace(3), trace(3));
    assert_ne!(trace(3), trace(4));
}
