//! Per-packet costs of the fast paths: template rendering against a full
//! encode, payload codecs, reflection and collection of one datagram.

use std::hint::black_box;
use std::net::Ipv6Addr;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use srv6_stamp::codec::{
    Envelope, ErrorEstimate, NtpTimestamp, ReflectorTestPayload, SegmentRoutingHeader,
    SenderTestPayload, StampPayload, TestDatagram,
};
use srv6_stamp::reflector::SessionReflector;
use srv6_stamp::sender::{sender_envelope, PacketTemplate, SessionSender};
use srv6_stamp::session::{SessionConfig, Ssid};
use srv6_stamp::transport::{SimLink, SimNetwork};

const S: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 1);
const R: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 2);
const T1: NtpTimestamp = NtpTimestamp::new(0xE8E3_A1C0, 0x8000_0000);

fn cfg(sids: Vec<Ipv6Addr>) -> SessionConfig {
    SessionConfig {
        sid_list: sids,
        ..SessionConfig::new(Ssid::new(7).unwrap(), S, R, Duration::from_millis(1))
    }
}

fn sender_payload(seq: u32) -> SenderTestPayload {
    SenderTestPayload {
        sequence_number: seq,
        timestamp: T1,
        error_estimate: ErrorEstimate::default(),
        ssid: 7,
    }
}

fn sender_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("sender_build");
    g.throughput(Throughput::Elements(1));
    for (name, sids) in [
        ("plain", vec![]),
        ("srh3", vec!["fc00::a".parse().unwrap(), "fc00::b".parse().unwrap(), R]),
    ] {
        let env = sender_envelope(&cfg(sids));
        let tpl = PacketTemplate::new(&env, sender_payload(0)).unwrap();
        let mut out = Vec::with_capacity(tpl.len());
        let mut seq = 0u32;
        g.bench_function(format!("template/{name}"), |b| {
            b.iter(|| {
                seq = seq.wrapping_add(1);
                tpl.render_into(&mut out, black_box(seq), black_box(T1));
                black_box(&out);
            })
        });
        g.bench_function(format!("full_encode/{name}"), |b| {
            b.iter(|| {
                seq = seq.wrapping_add(1);
                let d = TestDatagram {
                    envelope: env.clone(),
                    payload: StampPayload::Sender(sender_payload(black_box(seq))),
                };
                black_box(d.build().unwrap())
            })
        });
    }
    g.finish();
}

fn codecs(c: &mut Criterion) {
    let s = sender_payload(1);
    let r = ReflectorTestPayload::answering(&s, 64);
    let sb = s.encode().unwrap();
    let rb = r.encode().unwrap();
    let srh = SegmentRoutingHeader::for_path(vec![R; 4]).encode().unwrap();
    let mut g = c.benchmark_group("codec");
    g.bench_function("sender_encode", |b| b.iter(|| black_box(black_box(&s).encode().unwrap())));
    g.bench_function("sender_decode", |b| {
        b.iter(|| black_box(SenderTestPayload::decode(black_box(&sb)).unwrap()))
    });
    g.bench_function("reflector_encode", |b| b.iter(|| black_box(black_box(&r).encode().unwrap())));
    g.bench_function("reflector_decode", |b| {
        b.iter(|| black_box(ReflectorTestPayload::decode(black_box(&rb)).unwrap()))
    });
    g.bench_function("srh4_decode", |b| {
        b.iter(|| black_box(SegmentRoutingHeader::decode(black_box(&srh)).unwrap()))
    });
    g.finish();
}

fn endpoints(c: &mut Criterion) {
    let net = SimNetwork::new(0);
    let se = net.add_endpoint(S, 0);
    let re = net.add_endpoint(R, 0);
    net.connect_both(S, R, SimLink::constant(Duration::from_millis(1)));

    let reflector = SessionReflector::new(re);
    reflector.create_session(cfg(vec![]).reflector_side(vec![])).unwrap();
    reflector.start_session(7, None).unwrap();
    let probe = TestDatagram {
        envelope: Envelope::new(S, R),
        payload: StampPayload::Sender(sender_payload(3)),
    }
    .build()
    .unwrap();

    let sender = SessionSender::with_queue_capacity(se, 1 << 20);
    sender.create_session(cfg(vec![])).unwrap();
    sender.start_session(7, None).unwrap();
    let reply = TestDatagram {
        envelope: Envelope::new(R, S),
        payload: StampPayload::Reflector(ReflectorTestPayload::answering(&sender_payload(3), 64)),
    }
    .build()
    .unwrap();
    let session = sender.session(7).unwrap();

    let mut g = c.benchmark_group("endpoint");
    g.throughput(Throughput::Elements(1));
    g.bench_function("reflect", |b| b.iter(|| black_box(reflector.reflect_at(black_box(&probe), T1).unwrap())));
    g.bench_function("collect", |b| {
        b.iter(|| {
            let r = session.accept(black_box(&reply), T1, 0).unwrap();
            session.fetch_results(1);
            black_box(r)
        })
    });
    g.finish();
}

criterion_group!(benches, sender_build, codecs, endpoints);
criterion_main!(benches);
