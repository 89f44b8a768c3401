//! Sequential against rayon-parallel execution of the batch paths.
//! Build with `--no-default-features` to see the fallback, where both
//! modes run sequentially.

use std::hint::black_box;
use std::net::Ipv6Addr;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use srv6_stamp::analytics::{delays_batch, DelaySeries};
use srv6_stamp::codec::{
    Envelope, ErrorEstimate, NtpTimestamp, ReflectorTestPayload, SenderTestPayload, StampPayload,
    TestDatagram,
};
use srv6_stamp::exec::Parallelism;
use srv6_stamp::loadgen::{pdr_search, SearchConfig, SutKind, TrafficMix, TrialSetup};
use srv6_stamp::reflector::SessionReflector;
use srv6_stamp::sender::SessionSender;
use srv6_stamp::session::{DelayMode, MeasurementRecord, SessionConfig, Ssid};
use srv6_stamp::transport::{SimLink, SimNetwork};

const S: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 1);
const R: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 2);
const MODES: [Parallelism; 2] = [Parallelism::Sequential, Parallelism::Parallel];

fn probe(seq: u32) -> SenderTestPayload {
    SenderTestPayload {
        sequence_number: seq,
        timestamp: NtpTimestamp::new(0xE8E3_A1C0, seq),
        error_estimate: ErrorEstimate::default(),
        ssid: 7,
    }
}

fn records(n: usize) -> Vec<MeasurementRecord> {
    (0..n as u32)
        .map(|i| MeasurementRecord {
            ssid: 7,
            sender_seq: i,
            reflector_seq: i,
            t1: NtpTimestamp::new(100, i),
            t2: NtpTimestamp::new(100, i.wrapping_add(21_474_836)),
            t3: NtpTimestamp::new(100, i.wrapping_add(21_474_900)),
            t4: NtpTimestamp::new(100, i.wrapping_add(51_539_607)),
            sender_ttl: 64,
            received_at: i as i64,
        })
        .collect()
}

fn analytics(c: &mut Criterion) {
    let mut g = c.benchmark_group("delays_batch");
    for n in [1_000usize, 100_000] {
        let recs = records(n);
        g.throughput(Throughput::Elements(n as u64));
        for mode in MODES {
            g.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &recs, |b, r| {
                b.iter(|| black_box(delays_batch(mode, r)))
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("series_extend");
    let recs = records(100_000);
    g.throughput(Throughput::Elements(recs.len() as u64));
    for mode in MODES {
        g.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| {
                let mut s = DelaySeries::new(DelayMode::TwoWay);
                s.extend(mode, &recs);
                black_box(s.len())
            })
        });
    }
    g.finish();
}

fn datapath_batches(c: &mut Criterion) {
    let net = SimNetwork::new(0);
    let se = net.add_endpoint(S, 0);
    let re = net.add_endpoint(R, 0);
    net.connect_both(S, R, SimLink::constant(Duration::from_millis(1)));
    let cfg = SessionConfig::new(Ssid::new(7).unwrap(), S, R, Duration::from_millis(1));

    let reflector = SessionReflector::new(re);
    reflector.create_session(cfg.reflector_side(vec![])).unwrap();
    reflector.start_session(7, None).unwrap();
    let sender = SessionSender::with_queue_capacity(se, 1 << 22);
    sender.create_session(cfg).unwrap();
    sender.start_session(7, None).unwrap();
    let session = sender.session(7).unwrap();

    const N: usize = 4_096;
    let probes: Vec<Vec<u8>> = (0..N as u32)
        .map(|i| {
            TestDatagram {
                envelope: Envelope::new(S, R),
                payload: StampPayload::Sender(probe(i)),
            }
            .build()
            .unwrap()
        })
        .collect();
    let replies: Vec<Vec<u8>> = (0..N as u32)
        .map(|i| {
            TestDatagram {
                envelope: Envelope::new(R, S),
                payload: StampPayload::Reflector(ReflectorTestPayload::answering(&probe(i), 64)),
            }
            .build()
            .unwrap()
        })
        .collect();

    let mut g = c.benchmark_group("reflect_batch");
    g.throughput(Throughput::Elements(N as u64));
    for mode in MODES {
        g.bench_function(format!("{mode:?}"), |b| b.iter(|| black_box(reflector.reflect_batch(mode, &probes))));
    }
    g.finish();

    let mut g = c.benchmark_group("collect_batch");
    g.throughput(Throughput::Elements(N as u64));
    for mode in MODES {
        g.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| {
                let out = sender.on_receive_batch(mode, &replies);
                session.fetch_results(N);
                black_box(out)
            })
        });
    }
    g.finish();
}

fn search_trials(c: &mut Criterion) {
    let cap = 2_000.0;
    let setup = TrialSetup::new(
        SutKind::Reflector,
        TrafficMix::new(0.5, cap, Duration::from_millis(250)),
        Some(cap),
    );
    let cfg = SearchConfig::new(4.0 * cap);
    let mut g = c.benchmark_group("pdr_search");
    g.sample_size(10);
    for mode in MODES {
        g.bench_function(format!("{mode:?}"), |b| b.iter(|| black_box(pdr_search(&setup, &cfg, mode).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, analytics, datapath_batches, search_trials);
criterion_main!(benches);
