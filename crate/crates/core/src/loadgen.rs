//! Mixed data/STAMP throughput trials and the PDR search.
//!
//! A trial runs on a fresh [`SimNetwork`]: a traffic generator (TG) node
//! offers packets at a constant rate to a system under test (SUT) node.
//! The SUT is a real [`StampNode`] (reflector or collector) whose input is
//! optionally limited by a GCRA token bucket ([`GatedTransport`]) so that
//! it has a known capacity. Non-STAMP data packets are echoed back by the
//! SUT's kernel path. Drops are computed from what returns to the TG plus,
//! for the collector, the processed-packet counter read over the control
//! channel.
//!
//! [`pdr_search`] bisects the offered rate for the highest rate whose
//! median drop ratio stays within the target.

use std::net::Ipv6Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codec::{
    build_udp_datagram, DatagramView, Envelope, ErrorEstimate, ReflectorTestPayload,
    SenderTestPayload, StampPayload, TestDatagram, STAMP_PORT,
};
use crate::control::{
    ControlClient, ControlError, ControlRequest, InProcessClient, NodeGlobalConfig, NodeRole,
    ReplyBody, SessionSpec, StampNode, WireFormat,
};
use crate::exec::{self, Parallelism};
use crate::reflector::SessionReflector;
use crate::sender::{sender_envelope, PacketTemplate, SessionSender};
use crate::session::{SessionConfig, Ssid};
use crate::timebase::Clock;
use crate::transport::{
    DatagramConsumer, FilterSpec, FilterStats, Registration, SimEndpoint, SimLink, SimNetwork,
    Tick, TimerHandle, Transport, TransportError,
};

const TG_ADDR: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0xa, 1);
const SUT_ADDR: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0xb, 1);
const TRIAL_SSID: u16 = 1;
/// Resolution of the stamp fraction used by the interleaver.
const FRACTION_SCALE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoadgenError {
    #[error("system under test unreachable: {0}")]
    SutUnreachable(String),
    #[error("invalid traffic mix: {0}")]
    InvalidMix(String),
    #[error("invalid search parameters: {0}")]
    InvalidSearch(String),
    #[error("drop ratio is not monotone in rate: {lower_rate} pps drops {lower_drop}, {higher_rate} pps drops {higher_drop}")]
    NonMonotone {
        lower_rate: f64,
        lower_drop: f64,
        higher_rate: f64,
        higher_drop: f64,
    },
    #[error("even the lowest rate {rate} pps drops {drop_ratio}")]
    NoPassingRate { rate: f64, drop_ratio: f64 },
}

impl From<ControlError> for LoadgenError {
    fn from(e: ControlError) -> Self {
        LoadgenError::SutUnreachable(e.to_string())
    }
}

impl From<TransportError> for LoadgenError {
    fn from(e: TransportError) -> Self {
        LoadgenError::SutUnreachable(e.to_string())
    }
}

/// The plain IPv6/UDP "user" packet of a mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    pub src_port: u16,
    pub dst_port: u16,
    pub payload_len: usize,
}

impl Default for DataPacket {
    fn default() -> Self {
        DataPacket {
            src_port: 40_000,
            dst_port: 9,
            payload_len: 44,
        }
    }
}

impl DataPacket {
    pub fn build(&self, src: Ipv6Addr, dst: Ipv6Addr) -> Result<Vec<u8>, LoadgenError> {
        let env = Envelope {
            src_port: self.src_port,
            dst_port: self.dst_port,
            ..Envelope::new(src, dst)
        };
        build_udp_datagram(&env, &vec![0u8; self.payload_len])
            .map(|(b, _)| b)
            .map_err(|e| LoadgenError::InvalidMix(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficMix {
    /// Share of STAMP packets in [0, 1].
    pub stamp_fraction: f64,
    #[serde(default)]
    pub data_packet: DataPacket,
    /// Packets per second; overridden by the rate under test in searches.
    pub offered_rate: f64,
    #[serde(rename = "duration_ns", with = "crate::session::duration_ns")]
    pub duration: Duration,
}

impl TrafficMix {
    pub fn new(stamp_fraction: f64, offered_rate: f64, duration: Duration) -> Self {
        TrafficMix {
            stamp_fraction,
            data_packet: DataPacket::default(),
            offered_rate,
            duration,
        }
    }

    pub fn validate(&self) -> Result<(), LoadgenError> {
        if !(0.0..=1.0).contains(&self.stamp_fraction) {
            return Err(LoadgenError::InvalidMix(format!(
                "stamp_fraction {} outside [0, 1]",
                self.stamp_fraction
            )));
        }
        if !(self.offered_rate.is_finite() && self.offered_rate > 0.0) {
            return Err(LoadgenError::InvalidMix(format!(
                "offered_rate {} must be positive",
                self.offered_rate
            )));
        }
        if self.duration.is_zero() {
            return Err(LoadgenError::InvalidMix("duration must be nonzero".into()));
        }
        Ok(())
    }

    fn scaled_fraction(&self) -> u64 {
        (self.stamp_fraction * FRACTION_SCALE as f64).round() as u64
    }

    /// Whether packet `i` of the stream is a STAMP packet. Packets are
    /// spread evenly: after any prefix of n packets the STAMP count is
    /// `floor(n * fraction)`.
    pub fn is_stamp(&self, i: u64) -> bool {
        let f = self.scaled_fraction() as u128;
        let s = FRACTION_SCALE as u128;
        ((i as u128 + 1) * f) / s > (i as u128 * f) / s
    }

    /// Packets offered at `rate` over the mix duration.
    pub fn packet_count(&self, rate: f64) -> u64 {
        (rate * self.duration.as_secs_f64()).floor() as u64
    }

    /// Send offset of packet `i` at `rate`, in nanoseconds.
    pub fn send_offset_ns(i: u64, rate: f64) -> i64 {
        (i as f64 * 1e9 / rate).floor() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SutKind {
    /// Answers STAMP probes; returned replies count as delivered.
    Reflector,
    /// Receives reflected packets; its processed counter counts as delivered.
    Collector,
}

/// GCRA token bucket in integer nanoseconds.
#[derive(Debug)]
struct Gcra {
    /// Emission interval.
    t: i64,
    /// Burst tolerance.
    tau: i64,
    tat: i64,
}

impl Gcra {
    fn conform(&mut self, now: i64) -> bool {
        if now < self.tat - self.tau {
            return false;
        }
        self.tat = self.tat.max(now) + self.t;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateCounters {
    pub passed: u64,
    pub dropped_stamp: u64,
    pub dropped_data: u64,
}

struct Gate {
    bucket: Option<Mutex<Gcra>>,
    clock: Clock,
    stamp_port: u16,
    passed: AtomicU64,
    dropped_stamp: AtomicU64,
    dropped_data: AtomicU64,
}

impl Gate {
    fn admit(&self, datagram: &[u8]) -> bool {
        let Some(bucket) = &self.bucket else {
            self.passed.fetch_add(1, Ordering::Relaxed);
            return true;
        };
        if bucket.lock().unwrap().conform(self.clock.true_unix_nanos()) {
            self.passed.fetch_add(1, Ordering::Relaxed);
            return true;
        }
        let stamp = DatagramView::parse(datagram).is_ok_and(|v| v.dst_port == self.stamp_port);
        if stamp {
            self.dropped_stamp.fetch_add(1, Ordering::Relaxed);
        } else {
            self.dropped_data.fetch_add(1, Ordering::Relaxed);
        }
        false
    }
}

struct Gated {
    gate: Arc<Gate>,
    inner: Arc<dyn DatagramConsumer>,
}

impl DatagramConsumer for Gated {
    fn deliver(&self, datagram: &[u8]) {
        if self.gate.admit(datagram) {
            self.inner.deliver(datagram);
        }
    }
}

/// A transport whose inbound datagrams pass a shared token bucket before
/// reaching any consumer, giving the node a hard capacity in packets per
/// second. Sends are not limited.
pub struct GatedTransport {
    inner: Arc<dyn Transport>,
    gate: Arc<Gate>,
}

impl GatedTransport {
    /// `capacity_pps = None` admits everything. The burst tolerance is one
    /// emission interval.
    pub fn new(inner: Arc<dyn Transport>, capacity_pps: Option<f64>, stamp_port: u16) -> Arc<Self> {
        let bucket = capacity_pps.map(|c| {
            let t = (1e9 / c).round().max(1.0) as i64;
            Mutex::new(Gcra {
                t,
                tau: t,
                tat: i64::MIN / 2,
            })
        });
        Arc::new(GatedTransport {
            gate: Arc::new(Gate {
                bucket,
                clock: inner.clock(),
                stamp_port,
                passed: AtomicU64::new(0),
                dropped_stamp: AtomicU64::new(0),
                dropped_data: AtomicU64::new(0),
            }),
            inner,
        })
    }

    pub fn counters(&self) -> GateCounters {
        GateCounters {
            passed: self.gate.passed.load(Ordering::Relaxed),
            dropped_stamp: self.gate.dropped_stamp.load(Ordering::Relaxed),
            dropped_data: self.gate.dropped_data.load(Ordering::Relaxed),
        }
    }

    fn wrap(&self, consumer: Arc<dyn DatagramConsumer>) -> Arc<dyn DatagramConsumer> {
        Arc::new(Gated {
            gate: self.gate.clone(),
            inner: consumer,
        })
    }
}

impl Transport for GatedTransport {
    fn clock(&self) -> Clock {
        self.inner.clock()
    }

    fn send(&self, next_hop: Ipv6Addr, datagram: &[u8]) -> Result<(), TransportError> {
        self.inner.send(next_hop, datagram)
    }

    fn register(
        &self,
        filter: FilterSpec,
        consumer: Arc<dyn DatagramConsumer>,
    ) -> Result<Registration, TransportError> {
        self.inner.register(filter, self.wrap(consumer))
    }

    fn unregister(&self, reg: Registration) {
        self.inner.unregister(reg)
    }

    fn set_kernel_sink(&self, sink: Option<Arc<dyn DatagramConsumer>>) {
        self.inner.set_kernel_sink(sink.map(|s| self.wrap(s)))
    }

    fn schedule(&self, interval: Duration, tick: Tick) -> TimerHandle {
        self.inner.schedule(interval, tick)
    }

    fn filter_stats(&self) -> FilterStats {
        self.inner.filter_stats()
    }
}

/// Kernel-path stand-in that returns every datagram to its source by
/// swapping addresses and ports. The UDP checksum stays valid because both
/// swaps leave the one's-complement sum unchanged.
pub fn data_echo(transport: Arc<dyn Transport>) -> Arc<dyn DatagramConsumer> {
    Arc::new(move |datagram: &[u8]| {
        let Ok(view) = DatagramView::parse(datagram) else {
            return;
        };
        if view.srh().is_some() {
            return;
        }
        let udp = view.payload_offset() - crate::codec::UDP_HEADER_LEN;
        let mut out = datagram.to_vec();
        out[8..24].copy_from_slice(&datagram[24..40]);
        out[24..40].copy_from_slice(&datagram[8..24]);
        out[udp..udp + 2].copy_from_slice(&datagram[udp + 2..udp + 4]);
        out[udp + 2..udp + 4].copy_from_slice(&datagram[udp..udp + 2]);
        if let Err(e) = transport.send(view.src_addr, &out) {
            log::debug!("data echo to {} failed: {e}", view.src_addr);
        }
    })
}

/// Everything needed to run trials against one SUT configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub sut: SutKind,
    pub mix: TrafficMix,
    /// Token-bucket capacity of the SUT; `None` is unlimited.
    #[serde(default)]
    pub capacity_pps: Option<f64>,
    /// One-way TG/SUT link delay in nanoseconds.
    #[serde(default = "default_link_delay_ns")]
    pub link_delay_ns: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_link_delay_ns() -> u64 {
    10_000
}

impl TrialSetup {
    pub fn new(sut: SutKind, mix: TrafficMix, capacity_pps: Option<f64>) -> Self {
        TrialSetup {
            sut,
            mix,
            capacity_pps,
            link_delay_ns: default_link_delay_ns(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rate: f64,
    pub sent: u64,
    pub stamp_sent: u64,
    pub data_sent: u64,
    pub data_echoed: u64,
    /// Replies received by the TG (reflector) or the SUT's processed
    /// counter (collector).
    pub stamp_delivered: u64,
    pub drops: u64,
    pub drop_ratio: f64,
    /// STAMP packets the SUT's input gate refused.
    pub gate_dropped_stamp: u64,
    pub gate_dropped_data: u64,
}

fn counter() -> (Arc<AtomicU64>, Arc<dyn DatagramConsumer>) {
    let c = Arc::new(AtomicU64::new(0));
    let c2 = c.clone();
    (
        c,
        Arc::new(move |_: &[u8]| {
            c2.fetch_add(1, Ordering::Relaxed);
        }),
    )
}

fn unwrap_empty(body: ReplyBody) -> Result<(), LoadgenError> {
    match body {
        ReplyBody::Empty => Ok(()),
        other => Err(LoadgenError::SutUnreachable(format!("unexpected reply {other:?}"))),
    }
}

fn ssid() -> Ssid {
    Ssid::new(TRIAL_SSID).expect("nonzero")
}

/// Runs one trial at `rate` packets per second. `trial` perturbs the
/// simulation seed.
pub fn run_trial(setup: &TrialSetup, rate: f64, trial: u32) -> Result<TrialResult, LoadgenError> {
    let mix = TrafficMix {
        offered_rate: rate,
        ..setup.mix.clone()
    };
    mix.validate()?;
    let net = SimNetwork::new(setup.seed.wrapping_add(trial as u64));
    let tg = net.add_endpoint(TG_ADDR, 0);
    let sut_ep: Arc<SimEndpoint> = net.add_endpoint(SUT_ADDR, 0);
    net.connect_both(
        TG_ADDR,
        SUT_ADDR,
        SimLink::constant(Duration::from_nanos(setup.link_delay_ns)),
    );
    let gated = GatedTransport::new(sut_ep.clone(), setup.capacity_pps, STAMP_PORT);
    gated.set_kernel_sink(Some(data_echo(sut_ep)));

    let role = match setup.sut {
        SutKind::Reflector => NodeRole::Reflector,
        SutKind::Collector => NodeRole::Sender,
    };
    let node = StampNode::new(role, gated.clone());
    let mut ctl = InProcessClient::encoded(node, WireFormat::Binary);
    unwrap_empty(ctl.request(&ControlRequest::Init(NodeGlobalConfig::new(SUT_ADDR)))?)?;

    // The probing session as seen from the TG for a reflector SUT, or
    // from the SUT for a collector SUT.
    let (spec, probe_cfg) = match setup.sut {
        SutKind::Reflector => {
            let cfg = SessionConfig::new(ssid(), TG_ADDR, SUT_ADDR, Duration::from_secs(1));
            (SessionSpec::Reflector(cfg.reflector_side(Vec::new())), cfg)
        }
        SutKind::Collector => {
            let cfg = SessionConfig::new(ssid(), SUT_ADDR, TG_ADDR, Duration::from_secs(3600));
            (SessionSpec::Sender(cfg.clone()), cfg)
        }
    };
    unwrap_empty(ctl.request(&ControlRequest::CreateStampSession(spec))?)?;
    unwrap_empty(ctl.request(&ControlRequest::StartStampSession {
        ssid: TRIAL_SSID,
        duration_ns: None,
    })?)?;

    let (echoed, echo_sink) = counter();
    tg.register(FilterSpec::new(Some(TG_ADDR), mix.data_packet.src_port), echo_sink)?;
    let (replies, reply_sink) = counter();
    tg.register(FilterSpec::new(Some(TG_ADDR), STAMP_PORT), reply_sink)?;

    let data = mix.data_packet.build(TG_ADDR, SUT_ADDR)?;
    let probe = PacketTemplate::new(
        &sender_envelope(&probe_cfg),
        SenderTestPayload {
            sequence_number: 0,
            timestamp: Default::default(),
            error_estimate: ErrorEstimate::default(),
            ssid: TRIAL_SSID,
        },
    )
    .map_err(|e| LoadgenError::InvalidMix(e.to_string()))?;
    let reflected_env = Envelope::new(TG_ADDR, SUT_ADDR);
    let clock = tg.clock();

    let n = mix.packet_count(rate);
    let start = net.now();
    let (mut stamp_sent, mut data_sent) = (0u64, 0u64);
    let mut last = start;
    for i in 0..n {
        last = start + TrafficMix::send_offset_ns(i, rate);
        net.run_until(last);
        if mix.is_stamp(i) {
            let seq = stamp_sent as u32;
            let now = clock.now_ntp().map_err(|e| LoadgenError::InvalidMix(e.to_string()))?;
            let bytes = match setup.sut {
                SutKind::Reflector => probe.render(seq, now),
                SutKind::Collector => {
                    let sender = SenderTestPayload {
                        sequence_number: seq,
                        timestamp: now,
                        error_estimate: ErrorEstimate::default(),
                        ssid: TRIAL_SSID,
                    };
                    TestDatagram {
                        envelope: reflected_env.clone(),
                        payload: StampPayload::Reflector(ReflectorTestPayload {
                            receive_timestamp: now,
                            ..ReflectorTestPayload::answering(&sender, 64)
                        }),
                    }
                    .build()
                    .map_err(|e| LoadgenError::InvalidMix(e.to_string()))?
                }
            };
            tg.send(SUT_ADDR, &bytes)?;
            stamp_sent += 1;
        } else {
            tg.send(SUT_ADDR, &data)?;
            data_sent += 1;
        }
    }
    // Settle: nothing in flight is older than a round trip.
    net.run_until(last + 2 * setup.link_delay_ns as i64 + 1_000_000);

    let stamp_delivered = match setup.sut {
        SutKind::Reflector => replies.load(Ordering::Relaxed),
        SutKind::Collector => match ctl.request(&ControlRequest::GetProcessedCount)? {
            ReplyBody::ProcessedCount { processed } => processed,
            other => {
                return Err(LoadgenError::SutUnreachable(format!("unexpected reply {other:?}")))
            }
        },
    };
    let _ = ctl.request(&ControlRequest::Reset);
    let data_echoed = echoed.load(Ordering::Relaxed);
    let sent = stamp_sent + data_sent;
    let drops = sent.saturating_sub(data_echoed + stamp_delivered);
    let gate = gated.counters();
    Ok(TrialResult {
        rate,
        sent,
        stamp_sent,
        data_sent,
        data_echoed,
        stamp_delivered,
        drops,
        drop_ratio: if sent == 0 { 0.0 } else { drops as f64 / sent as f64 },
        gate_dropped_stamp: gate.dropped_stamp,
        gate_dropped_data: gate.dropped_data,
    })
}

/// Source of drop ratios for the search.
pub trait TrialRunner: Sync {
    fn drop_ratio(&self, rate: f64, trial: u32) -> Result<f64, LoadgenError>;
}

impl TrialRunner for TrialSetup {
    fn drop_ratio(&self, rate: f64, trial: u32) -> Result<f64, LoadgenError> {
        run_trial(self, rate, trial).map(|r| r.drop_ratio)
    }
}

/// An analytic drop curve; lets the search be checked without simulation.
pub struct DropCurve<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> TrialRunner for DropCurve<F> {
    fn drop_ratio(&self, rate: f64, _trial: u32) -> Result<f64, LoadgenError> {
        Ok((self.0)(rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default = "default_min_rate")]
    pub min_rate: f64,
    pub max_rate: f64,
    /// Highest acceptable drop ratio.
    #[serde(default = "default_target")]
    pub target: f64,
    /// Bracket width at which the search stops, relative to its low end.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Trials per probed rate; the median drop ratio is used.
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Drop-ratio decrease between a lower and a higher rate tolerated
    /// before the trace is declared non-monotone.
    #[serde(default = "default_monotone_slack")]
    pub monotone_slack: f64,
}

fn default_min_rate() -> f64 {
    1.0
}
fn default_target() -> f64 {
    0.005
}
fn default_tolerance() -> f64 {
    0.01
}
fn default_trials() -> u32 {
    3
}
fn default_monotone_slack() -> f64 {
    1e-3
}

impl SearchConfig {
    pub fn new(max_rate: f64) -> Self {
        SearchConfig {
            min_rate: default_min_rate(),
            max_rate,
            target: default_target(),
            tolerance: default_tolerance(),
            trials: default_trials(),
            monotone_slack: default_monotone_slack(),
        }
    }

    fn validate(&self) -> Result<(), LoadgenError> {
        let ok = self.min_rate > 0.0
            && self.max_rate.is_finite()
            && self.max_rate >= self.min_rate
            && (0.0..1.0).contains(&self.target)
            && self.tolerance > 0.0
            && self.trials > 0
            && self.monotone_slack >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LoadgenError::InvalidSearch(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub rate: f64,
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrResult {
    pub pdr_rate: f64,
    pub drop_ratio_at_rate: f64,
    /// Lowest probed rate that missed the target; `None` when even the
    /// maximum rate met it.
    pub next_higher: Option<Probe>,
    /// Every probe in the order it ran.
    pub trace: Vec<Probe>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn probe<R: TrialRunner + ?Sized>(
    runner: &R,
    rate: f64,
    cfg: &SearchConfig,
    mode: Parallelism,
) -> Result<Probe, LoadgenError> {
    let drops = exec::map_range(mode, cfg.trials as usize, |k| runner.drop_ratio(rate, k as u32));
    let drops = drops.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Probe {
        rate,
        drop_ratio: median(drops),
    })
}

/// Finds any pair of probes where a higher rate dropped noticeably less
/// than a lower one.
pub fn check_monotone(trace: &[Probe], slack: f64) -> Result<(), LoadgenError> {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    let mut worst = sorted.first().copied();
    for p in sorted.iter().skip(1) {
        let w = worst.expect("nonempty");
        if p.rate > w.rate && p.drop_ratio + slack < w.drop_ratio {
            return Err(LoadgenError::NonMonotone {
                lower_rate: w.rate,
                lower_drop: w.drop_ratio,
                higher_rate: p.rate,
                higher_drop: p.drop_ratio,
            });
        }
        if p.drop_ratio > w.drop_ratio {
            worst = Some(*p);
        }
    }
    Ok(())
}

/// Bisects `[min_rate, max_rate]` for the highest rate whose median drop
/// ratio is at most `target`, stopping once the bracket is narrower than
/// `tolerance` relative to its low end. Trials of one probe run under
/// `mode`.
pub fn pdr_search<R: TrialRunner + ?Sized>(
    runner: &R,
    cfg: &SearchConfig,
    mode: Parallelism,
) -> Result<PdrResult, LoadgenError> {
    cfg.validate()?;
    let mut trace = Vec::new();
    let run = |rate: f64, trace: &mut Vec<Probe>| -> Result<Probe, LoadgenError> {
        let p = probe(runner, rate, cfg, mode)?;
        trace.push(p);
        Ok(p)
    };
    let top = run(cfg.max_rate, &mut trace)?;
    if top.drop_ratio <= cfg.target {
        run(cfg.min_rate, &mut trace)?;
        check_monotone(&trace, cfg.monotone_slack)?;
        return Ok(PdrResult {
            pdr_rate: top.rate,
            drop_ratio_at_rate: top.drop_ratio,
            next_higher: None,
            trace,
        });
    }
    let mut lo = run(cfg.min_rate, &mut trace)?;
    if lo.drop_ratio > cfg.target {
        check_monotone(&trace, cfg.monotone_slack)?;
        return Err(LoadgenError::NoPassingRate {
            rate: lo.rate,
            drop_ratio: lo.drop_ratio,
        });
    }
    let mut hi = top;
    while hi.rate - lo.rate > cfg.tolerance * lo.rate {
        let mid = run((lo.rate + hi.rate) / 2.0, &mut trace)?;
        if mid.drop_ratio <= cfg.target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    check_monotone(&trace, cfg.monotone_slack)?;
    Ok(PdrResult {
        pdr_rate: lo.rate,
        drop_ratio_at_rate: lo.drop_ratio,
        next_higher: Some(hi),
        trace,
    })
}

/// A loadgen experiment as read from JSON: fixed-rate trials, a PDR
/// search, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub setup: TrialSetup,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
}

/// Input datagrams a SUT of `kind` can process per wall-clock second,
/// delivering `packets` pre-built STAMP packets straight to its consumer.
/// Reflection includes building and sending the reply; collection
/// includes validating and queueing the record.
pub fn processing_rate(kind: SutKind, packets: usize) -> Result<f64, LoadgenError> {
    let net = SimNetwork::new(0);
    net.add_endpoint(TG_ADDR, 0);
    let sut = net.add_endpoint(SUT_ADDR, 0);
    net.connect_both(TG_ADDR, SUT_ADDR, SimLink::constant(Duration::from_micros(10)));
    let clock = sut.clock();
    let ts = clock.now_ntp().map_err(|e| LoadgenError::InvalidMix(e.to_string()))?;
    match kind {
        SutKind::Reflector => {
            let cfg = SessionConfig::new(ssid(), TG_ADDR, SUT_ADDR, Duration::from_secs(1));
            let engine = SessionReflector::new(sut.clone());
            engine.create_session(cfg.reflector_side(Vec::new()))?;
            engine.start_session(TRIAL_SSID, None)?;
            let template = PacketTemplate::new(
                &sender_envelope(&cfg),
                SenderTestPayload {
                    sequence_number: 0,
                    timestamp: ts,
                    error_estimate: ErrorEstimate::default(),
                    ssid: TRIAL_SSID,
                },
            )?;
            let input: Vec<Vec<u8>> = (0..packets).map(|i| template.render(i as u32, ts)).collect();
            let t0 = Instant::now();
            for p in &input {
                engine.deliver(p);
            }
            let dt = t0.elapsed();
            if engine.processed() != packets as u64 {
                return Err(LoadgenError::SutUnreachable("reflector discarded probes".into()));
            }
            Ok(packets as f64 / dt.as_secs_f64())
        }
        SutKind::Collector => {
            let cfg = SessionConfig::new(ssid(), SUT_ADDR, TG_ADDR, Duration::from_secs(3600));
            let engine = SessionSender::with_queue_capacity(sut.clone(), packets.max(1));
            engine.create_session(cfg)?;
            engine.start_session(TRIAL_SSID, None)?;
            let env = Envelope::new(TG_ADDR, SUT_ADDR);
            let input = (0..packets)
                .map(|i| {
                    let s = SenderTestPayload {
                        sequence_number: i as u32,
                        timestamp: ts,
                        error_estimate: ErrorEstimate::default(),
                        ssid: TRIAL_SSID,
                    };
                    TestDatagram {
                        envelope: env.clone(),
                        payload: StampPayload::Reflector(ReflectorTestPayload::answering(&s, 64)),
                    }
                    .build()
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| LoadgenError::InvalidMix(e.to_string()))?;
            let t0 = Instant::now();
            for p in &input {
                engine.deliver(p);
            }
            let dt = t0.elapsed();
            if engine.processed() != packets as u64 {
                return Err(LoadgenError::SutUnreachable("collector discarded packets".into()));
            }
            Ok(packets as f64 / dt.as_secs_f64())
        }
    }
}

impl From<crate::session::SessionError> for LoadgenError {
    fn from(e: crate::session::SessionError) -> Self {
        LoadgenError::SutUnreachable(e.to_string())
    }
}
