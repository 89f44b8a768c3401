//! STAMP Session-Sender and collector.
//!
//! Each session pre-builds its complete test datagram at creation time
//! ([`PacketTemplate`]). Transmitting a probe copies the template, writes the
//! sequence number and T1 and updates the UDP checksum incrementally from a
//! precomputed partial sum. Reflected packets are validated cheapest-first
//! (port, length, decode, SSID, status), stamped with T4 and queued as
//! [`MeasurementRecord`]s until the controller fetches them.

use std::collections::{HashMap, VecDeque};
use std::net::Ipv6Addr;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use crate::codec::{
    checksum, sender_offsets, DatagramView, Envelope, NtpTimestamp, ReflectorTestPayload,
    SegmentRoutingHeader, SenderTestPayload, StampPayload, TestDatagram, UdpLayout, PAYLOAD_LEN,
};
use crate::exec::{self, Parallelism};
use crate::session::{
    Discard, DiscardCounters, MeasurementRecord, SessionConfig, SessionError, SessionStatus, Ssid,
};
use crate::timebase::Clock;
use crate::transport::{DatagramConsumer, TimerHandle, Transport};

/// Default bound on queued measurement records per session.
pub const DEFAULT_QUEUE_CAPACITY: usize = 65_536;

/// How long a duration-limited session keeps collecting replies after its
/// last probe before it stops.
pub const COLLECT_GRACE: Duration = Duration::from_secs(1);

/// A fully encoded sender datagram with the locations of its variable
/// fields.
#[derive(Debug, Clone)]
pub struct PacketTemplate {
    bytes: Vec<u8>,
    layout: UdpLayout,
    /// Unfolded checksum sum with sequence, timestamp and checksum zeroed.
    base_sum: u64,
}

impl PacketTemplate {
    /// Builds the datagram for `envelope` / `payload` with the sequence
    /// number and timestamp zeroed.
    pub fn new(envelope: &Envelope, payload: SenderTestPayload) -> Result<Self, SessionError> {
        let blank = SenderTestPayload {
            sequence_number: 0,
            timestamp: NtpTimestamp::default(),
            ..payload
        };
        let (mut bytes, layout) = TestDatagram {
            envelope: envelope.clone(),
            payload: StampPayload::Sender(blank),
        }
        .build_with_layout()?;
        bytes[layout.checksum_offset..layout.checksum_offset + 2].fill(0);
        let udp = &bytes[layout.udp_offset..];
        let base_sum = checksum::sum_words(
            udp,
            checksum::pseudo_header_sum(
                &envelope.src_addr,
                &envelope.final_destination(),
                udp.len() as u32,
                crate::codec::IPPROTO_UDP,
            ),
        );
        let mut t = PacketTemplate {
            bytes,
            layout,
            base_sum,
        };
        let (seq, ts) = (0, NtpTimestamp::default());
        let mut scratch = t.bytes.clone();
        t.patch(&mut scratch, seq, ts);
        t.bytes = scratch;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn layout(&self) -> UdpLayout {
        self.layout
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Writes `seq` and `t1` into `buf` (a copy of the template) and fixes
    /// the checksum.
    fn patch(&self, buf: &mut [u8], seq: u32, t1: NtpTimestamp) {
        let p = self.layout.payload_offset;
        let seq_at = p + sender_offsets::SEQUENCE;
        let ts_at = p + sender_offsets::TIMESTAMP;
        buf[seq_at..seq_at + 4].copy_from_slice(&seq.to_be_bytes());
        buf[ts_at..ts_at + 8].copy_from_slice(&t1.to_bytes());
        let acc = checksum::sum_words(&buf[seq_at..ts_at + 8], self.base_sum);
        let c = checksum::finish_udp(acc);
        buf[self.layout.checksum_offset..self.layout.checksum_offset + 2]
            .copy_from_slice(&c.to_be_bytes());
    }

    /// Renders the datagram for `(seq, t1)` into `out`, reusing its
    /// allocation.
    pub fn render_into(&self, out: &mut Vec<u8>, seq: u32, t1: NtpTimestamp) {
        out.clear();
        out.extend_from_slice(&self.bytes);
        self.patch(out, seq, t1);
    }

    pub fn render(&self, seq: u32, t1: NtpTimestamp) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.bytes.len());
        self.render_into(&mut out, seq, t1);
        out
    }
}

/// Envelope of the probes a sender session emits.
pub fn sender_envelope(cfg: &SessionConfig) -> Envelope {
    let mut env = Envelope::new(cfg.src_addr, cfg.reflector_addr);
    env.src_port = cfg.sender_port;
    env.dst_port = cfg.reflector_port;
    if let Some(&first) = cfg.sid_list.first() {
        env.dst_addr = first;
        env.srh = Some(SegmentRoutingHeader::for_path(cfg.sid_list.clone()));
    }
    env
}

/// Bounded FIFO of measurement records; the oldest record is dropped on
/// overflow.
#[derive(Debug)]
pub struct ResultQueue {
    records: VecDeque<MeasurementRecord>,
    capacity: usize,
    enqueued: u64,
    fetched: u64,
    overflowed: u64,
}

impl ResultQueue {
    pub fn new(capacity: usize) -> Self {
        ResultQueue {
            records: VecDeque::new(),
            capacity: capacity.max(1),
            enqueued: 0,
            fetched: 0,
            overflowed: 0,
        }
    }

    pub fn push(&mut self, r: MeasurementRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
            self.overflowed += 1;
        }
        self.records.push_back(r);
        self.enqueued += 1;
    }

    /// Removes and returns up to `max` oldest records.
    pub fn drain(&mut self, max: usize) -> Vec<MeasurementRecord> {
        let n = max.min(self.records.len());
        self.fetched += n as u64;
        self.records.drain(..n).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counters(&self) -> QueueCounters {
        QueueCounters {
            enqueued: self.enqueued,
            fetched: self.fetched,
            overflowed: self.overflowed,
            queued: self.records.len() as u64,
        }
    }
}

/// `enqueued == fetched + queued + overflowed` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueCounters {
    pub enqueued: u64,
    pub fetched: u64,
    pub overflowed: u64,
    pub queued: u64,
}

/// Sliding window over recently seen sender sequence numbers.
#[derive(Debug, Default)]
struct SeqWindow {
    highest: Option<u32>,
    bits: [u64; 16],
}

impl SeqWindow {
    const SPAN: u32 = 1024;

    fn test_bit(&self, i: u32) -> bool {
        let i = i % Self::SPAN;
        self.bits[(i / 64) as usize] & (1 << (i % 64)) != 0
    }

    fn set_bit(&mut self, i: u32, on: bool) {
        let i = i % Self::SPAN;
        let w = &mut self.bits[(i / 64) as usize];
        if on {
            *w |= 1 << (i % 64);
        } else {
            *w &= !(1 << (i % 64));
        }
    }

    /// Records `seq`; true if it was already seen within the window.
    fn observe(&mut self, seq: u32) -> bool {
        let Some(hi) = self.highest else {
            self.highest = Some(seq);
            self.set_bit(seq, true);
            return false;
        };
        if seq > hi {
            let gap = seq - hi;
            if gap >= Self::SPAN {
                self.bits = [0; 16];
            } else {
                for s in hi + 1..seq {
                    self.set_bit(s, false);
                }
            }
            self.highest = Some(seq);
            self.set_bit(seq, true);
            false
        } else if hi - seq >= Self::SPAN {
            false
        } else {
            let seen = self.test_bit(seq);
            self.set_bit(seq, true);
            seen
        }
    }
}

#[derive(Debug, Default)]
pub struct SenderStats {
    pub sent: AtomicU64,
    pub sequence_repeats: AtomicU64,
    pub discards: DiscardCounters,
}

/// One sender-side STAMP session.
pub struct SenderSession {
    config: SessionConfig,
    template: PacketTemplate,
    next_seq: AtomicU32,
    status: Mutex<SessionStatus>,
    results: Mutex<ResultQueue>,
    seen: Mutex<SeqWindow>,
    timer: Mutex<Option<TimerHandle>>,
    pub stats: SenderStats,
}

impl SenderSession {
    pub fn new(config: SessionConfig, error_estimate: crate::codec::ErrorEstimate) -> Result<Self, SessionError> {
        Self::with_capacity(config, error_estimate, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(
        config: SessionConfig,
        error_estimate: crate::codec::ErrorEstimate,
        capacity: usize,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let payload = SenderTestPayload {
            sequence_number: 0,
            timestamp: NtpTimestamp::default(),
            error_estimate,
            ssid: config.ssid.get(),
        };
        let template = PacketTemplate::new(&sender_envelope(&config), payload)?;
        Ok(SenderSession {
            config,
            template,
            next_seq: AtomicU32::new(0),
            status: Mutex::new(SessionStatus::Created),
            results: Mutex::new(ResultQueue::new(capacity)),
            seen: Mutex::new(SeqWindow::default()),
            timer: Mutex::new(None),
            stats: SenderStats::default(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn ssid(&self) -> Ssid {
        self.config.ssid
    }

    pub fn template(&self) -> &PacketTemplate {
        &self.template
    }

    pub fn status(&self) -> SessionStatus {
        *self.status.lock().unwrap()
    }

    pub fn next_seq(&self) -> u32 {
        self.next_seq.load(Ordering::Acquire)
    }

    fn transition(&self, from: SessionStatus, to: SessionStatus, op: &'static str) -> Result<(), SessionError> {
        let mut st = self.status.lock().unwrap();
        if *st != from {
            return Err(SessionError::IllegalTransition { from: *st, op });
        }
        *st = to;
        Ok(())
    }

    /// created -> running, without a transmit loop.
    pub fn mark_running(&self) -> Result<(), SessionError> {
        self.transition(SessionStatus::Created, SessionStatus::Running, "start")
    }

    /// running -> stopped, cancelling the transmit loop if any.
    pub fn stop(&self) -> Result<(), SessionError> {
        self.transition(SessionStatus::Running, SessionStatus::Stopped, "stop")?;
        if let Some(t) = self.timer.lock().unwrap().take() {
            t.cancel();
        }
        Ok(())
    }

    fn auto_stop(&self) {
        let mut st = self.status.lock().unwrap();
        if *st == SessionStatus::Running {
            *st = SessionStatus::Stopped;
        }
    }

    /// Renders the next probe into `out`: sequence number and T1 patched
    /// into the template.
    pub fn next_packet_into(&self, clock: &Clock, out: &mut Vec<u8>) -> Result<u32, SessionError> {
        if self.status() != SessionStatus::Running {
            return Err(SessionError::NotRunning);
        }
        let seq = self.next_seq.fetch_add(1, Ordering::AcqRel);
        let t1 = clock.now_ntp()?;
        self.template.render_into(out, seq, t1);
        self.stats.sent.fetch_add(1, Ordering::Relaxed);
        Ok(seq)
    }

    pub fn next_packet(&self, clock: &Clock) -> Result<Vec<u8>, SessionError> {
        let mut out = Vec::with_capacity(self.template.len());
        self.next_packet_into(clock, &mut out)?;
        Ok(out)
    }

    /// Validates a reflected datagram and queues its record. `t4` is the
    /// reception time captured at hand-off from the transport.
    pub fn accept(&self, datagram: &[u8], t4: NtpTimestamp, received_at: i64) -> Result<MeasurementRecord, Discard> {
        let view = DatagramView::parse(datagram).map_err(|_| Discard::NotStamp)?;
        self.accept_view(&view, t4, received_at)
    }

    fn accept_view(&self, view: &DatagramView<'_>, t4: NtpTimestamp, received_at: i64) -> Result<MeasurementRecord, Discard> {
        let d = &self.stats.discards;
        if view.dst_port != self.config.sender_port {
            return Err(d.record(Discard::NotStamp));
        }
        let body = view.payload();
        if body.len() < PAYLOAD_LEN || !view.checksum_valid() {
            return Err(d.record(Discard::DecodeError));
        }
        let p = ReflectorTestPayload::decode(body)
            .map_err(|_| d.record(Discard::DecodeError))?
            .payload;
        if p.ssid != self.config.ssid.get() {
            return Err(d.record(Discard::WrongSsid));
        }
        if self.status() != SessionStatus::Running {
            return Err(d.record(Discard::SessionNotRunning));
        }
        let record = MeasurementRecord {
            ssid: p.ssid,
            sender_seq: p.sender_sequence_number,
            reflector_seq: p.sequence_number,
            t1: p.sender_timestamp,
            t2: p.receive_timestamp,
            t3: p.timestamp,
            t4,
            sender_ttl: p.sender_ttl,
            received_at,
        };
        if self.seen.lock().unwrap().observe(p.sender_sequence_number) {
            self.stats.sequence_repeats.fetch_add(1, Ordering::Relaxed);
        }
        self.results.lock().unwrap().push(record);
        Ok(record)
    }

    /// Validates and records a reflected datagram, stamping T4 from `clock`.
    pub fn on_receive(&self, datagram: &[u8], clock: &Clock) -> Result<MeasurementRecord, Discard> {
        let received_at = clock.now_unix_nanos();
        let t4 = clock.now_ntp().map_err(|_| Discard::DecodeError)?;
        self.accept(datagram, t4, received_at)
    }

    pub fn fetch_results(&self, max: usize) -> Vec<MeasurementRecord> {
        self.results.lock().unwrap().drain(max)
    }

    pub fn queue_counters(&self) -> QueueCounters {
        self.results.lock().unwrap().counters()
    }
}

/// Sender node: the session table plus the transport it transmits on.
pub struct SessionSender {
    transport: Arc<dyn Transport>,
    clock: Clock,
    sessions: RwLock<HashMap<u16, Arc<SenderSession>>>,
    queue_capacity: usize,
    /// Reflected packets turned into records, across all sessions.
    processed: AtomicU64,
    discards: DiscardCounters,
}

impl SessionSender {
    pub fn new(transport: Arc<dyn Transport>) -> Arc<Self> {
        Self::with_queue_capacity(transport, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_queue_capacity(transport: Arc<dyn Transport>, queue_capacity: usize) -> Arc<Self> {
        let clock = transport.clock();
        Arc::new(SessionSender {
            transport,
            clock,
            sessions: RwLock::new(HashMap::new()),
            queue_capacity,
            processed: AtomicU64::new(0),
            discards: DiscardCounters::default(),
        })
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn session(&self, ssid: u16) -> Result<Arc<SenderSession>, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(&ssid)
            .cloned()
            .ok_or(SessionError::UnknownSsid(ssid))
    }

    pub fn ssids(&self) -> Vec<u16> {
        let mut v: Vec<u16> = self.sessions.read().unwrap().keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn create_session(&self, cfg: SessionConfig) -> Result<Arc<SenderSession>, SessionError> {
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(&cfg.ssid.get()) {
            return Err(SessionError::DuplicateSsid(cfg.ssid));
        }
        let s = Arc::new(SenderSession::with_capacity(
            cfg,
            self.clock.error_estimate(),
            self.queue_capacity,
        )?);
        sessions.insert(s.ssid().get(), s.clone());
        Ok(s)
    }

    /// Starts the transmit loop: one probe every `interval`, the first one
    /// interval after the call. With `duration`, transmission ends after
    /// `duration / interval` probes and the session stops itself once
    /// [`COLLECT_GRACE`] has passed since the last probe.
    pub fn start_session(&self, ssid: u16, duration: Option<Duration>) -> Result<(), SessionError> {
        let s = self.session(ssid)?;
        s.mark_running()?;
        let interval = s.config.interval;
        let limit = duration.map(|d| (d.as_nanos() / interval.as_nanos()) as u64);
        if limit == Some(0) {
            s.auto_stop();
            return Ok(());
        }
        let transport = self.transport.clone();
        let clock = self.clock.clone();
        let next_hop = s.config.first_hop();
        let session = s.clone();
        let mut buf = Vec::with_capacity(s.template.len());
        let mut sent = 0u64;
        let grace_ticks = COLLECT_GRACE.as_nanos().div_ceil(interval.as_nanos()).max(1) as u64;
        let mut idle = 0u64;
        let handle = self.transport.schedule(
            interval,
            Box::new(move || {
                if limit.is_some_and(|l| sent >= l) {
                    idle += 1;
                    if idle >= grace_ticks {
                        session.auto_stop();
                        return ControlFlow::Break(());
                    }
                    return ControlFlow::Continue(());
                }
                if session.next_packet_into(&clock, &mut buf).is_err() {
                    return ControlFlow::Break(());
                }
                if let Err(e) = transport.send(next_hop, &buf) {
                    log::debug!("ssid {}: send failed: {e}", session.ssid());
                }
                sent += 1;
                ControlFlow::Continue(())
            }),
        );
        *s.timer.lock().unwrap() = Some(handle);
        Ok(())
    }

    pub fn stop_session(&self, ssid: u16) -> Result<(), SessionError> {
        self.session(ssid)?.stop()
    }

    /// Removes a session in any state, cancelling its transmit loop.
    pub fn destroy_session(&self, ssid: u16) -> Result<(), SessionError> {
        let s = self
            .sessions
            .write()
            .unwrap()
            .remove(&ssid)
            .ok_or(SessionError::UnknownSsid(ssid))?;
        if let Some(t) = s.timer.lock().unwrap().take() {
            t.cancel();
        }
        s.auto_stop();
        Ok(())
    }

    pub fn destroy_all(&self) {
        for ssid in self.ssids() {
            let _ = self.destroy_session(ssid);
        }
    }

    pub fn fetch_results(&self, ssid: u16, max: usize) -> Result<Vec<MeasurementRecord>, SessionError> {
        Ok(self.session(ssid)?.fetch_results(max))
    }

    /// Dispatches a reflected datagram to its session by SSID.
    pub fn on_receive(&self, datagram: &[u8]) -> Result<MeasurementRecord, Discard> {
        let received_at = self.clock.now_unix_nanos();
        let t4 = crate::timebase::unix_nanos_to_ntp(i128::from(received_at))
            .map_err(|_| self.discards.record(Discard::DecodeError))?;
        self.receive_at(datagram, t4, received_at)
    }

    fn receive_at(&self, datagram: &[u8], t4: NtpTimestamp, received_at: i64) -> Result<MeasurementRecord, Discard> {
        let view = DatagramView::parse(datagram).map_err(|_| self.discards.record(Discard::NotStamp))?;
        let body = view.payload();
        if body.len() < PAYLOAD_LEN {
            return Err(self.discards.record(Discard::DecodeError));
        }
        let ssid = u16::from_be_bytes([body[14], body[15]]);
        let session = match self.session(ssid) {
            Ok(s) => s,
            Err(_) => {
                return Err(self.discards.record(if ssid == 0 {
                    Discard::DecodeError
                } else {
                    Discard::WrongSsid
                }))
            }
        };
        match session.accept_view(&view, t4, received_at) {
            Ok(r) => {
                self.processed.fetch_add(1, Ordering::Relaxed);
                Ok(r)
            }
            Err(reason) => Err(self.discards.record(reason)),
        }
    }

    /// Collects a batch of reflected datagrams that arrived at `t4`.
    /// Validation and decoding fan out across threads in parallel mode.
    pub fn on_receive_batch(
        &self,
        mode: Parallelism,
        datagrams: &[Vec<u8>],
    ) -> Vec<Result<MeasurementRecord, Discard>> {
        let received_at = self.clock.now_unix_nanos();
        let t4 = match crate::timebase::unix_nanos_to_ntp(i128::from(received_at)) {
            Ok(t) => t,
            Err(_) => return datagrams.iter().map(|_| Err(Discard::DecodeError)).collect(),
        };
        exec::map(mode, datagrams, |d| self.receive_at(d, t4, received_at))
    }

    /// Reflected packets successfully recorded since creation.
    pub fn processed(&self) -> u64 {
        self.processed.load(Ordering::Relaxed)
    }

    pub fn discards(&self) -> &DiscardCounters {
        &self.discards
    }

    pub fn next_hop(&self, ssid: u16) -> Result<Ipv6Addr, SessionError> {
        Ok(self.session(ssid)?.config.first_hop())
    }
}

impl DatagramConsumer for SessionSender {
    fn deliver(&self, datagram: &[u8]) {
        let _ = self.on_receive(datagram);
    }
}
