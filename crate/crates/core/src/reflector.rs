//! STAMP Session-Reflector.
//!
//! A received test packet is timestamped (T2) on entry, validated, and
//! answered with a reflector payload carrying the echoed sender fields, T2,
//! and T3 taken immediately before the reply is built. Replies follow the
//! session's return SID list when one is configured.

use std::collections::HashMap;
use std::net::Ipv6Addr;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use crate::codec::{
    DatagramView, Envelope, NtpTimestamp, ReflectorTestPayload, SegmentRoutingHeader,
    SenderTestPayload, StampPayload, TestDatagram, DEFAULT_HOP_LIMIT, PAYLOAD_LEN,
};
use crate::exec::{self, Parallelism};
use crate::session::{
    Discard, DiscardCounters, ReflectorMode, ReflectorSessionConfig, SessionError, SessionStatus,
    Ssid,
};
use crate::timebase::{unix_nanos_to_ntp, Clock};
use crate::transport::{DatagramConsumer, TimerHandle, Transport};

/// One reflector-side STAMP session.
pub struct ReflectorSession {
    config: ReflectorSessionConfig,
    /// Next reflector sequence number in stateful mode.
    tx_counter: AtomicU32,
    status: Mutex<SessionStatus>,
    timer: Mutex<Option<TimerHandle>>,
    reflected: AtomicU64,
}

impl ReflectorSession {
    pub fn new(config: ReflectorSessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(ReflectorSession {
            config,
            tx_counter: AtomicU32::new(0),
            status: Mutex::new(SessionStatus::Created),
            timer: Mutex::new(None),
            reflected: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ReflectorSessionConfig {
        &self.config
    }

    pub fn ssid(&self) -> Ssid {
        self.config.ssid
    }

    pub fn status(&self) -> SessionStatus {
        *self.status.lock().unwrap()
    }

    pub fn reflected(&self) -> u64 {
        self.reflected.load(Ordering::Relaxed)
    }

    pub fn start(&self) -> Result<(), SessionError> {
        let mut st = self.status.lock().unwrap();
        if *st != SessionStatus::Created {
            return Err(SessionError::IllegalTransition { from: *st, op: "start" });
        }
        *st = SessionStatus::Running;
        Ok(())
    }

    pub fn stop(&self) -> Result<(), SessionError> {
        let mut st = self.status.lock().unwrap();
        if *st != SessionStatus::Running {
            return Err(SessionError::IllegalTransition { from: *st, op: "stop" });
        }
        *st = SessionStatus::Stopped;
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

    /// Envelope of the reply to a packet from `peer_addr:peer_port`.
    pub fn reply_envelope(&self, peer_addr: Ipv6Addr, peer_port: u16) -> Envelope {
        let dst = self.config.sender_addr.unwrap_or(peer_addr);
        let mut env = Envelope::new(self.config.reflector_addr, dst);
        env.src_port = self.config.reflector_port;
        env.dst_port = peer_port;
        env.hop_limit = DEFAULT_HOP_LIMIT;
        if let Some(&first) = self.config.return_sid_list.first() {
            env.dst_addr = first;
            env.srh = Some(SegmentRoutingHeader::for_path(
                self.config.return_sid_list.clone(),
            ));
        }
        env
    }

    /// Builds the reflected datagram for a decoded test payload.
    pub fn answer(
        &self,
        sender: &SenderTestPayload,
        received_hop_limit: u8,
        peer: (Ipv6Addr, u16),
        t2: NtpTimestamp,
        clock: &Clock,
    ) -> Result<(Ipv6Addr, Vec<u8>), SessionError> {
        let mut body = ReflectorTestPayload::answering(sender, received_hop_limit);
        body.sequence_number = match self.config.mode {
            ReflectorMode::Stateless => sender.sequence_number,
            ReflectorMode::Stateful => self.tx_counter.fetch_add(1, Ordering::AcqRel),
        };
        body.error_estimate = clock.error_estimate();
        body.receive_timestamp = t2;
        let envelope = self.reply_envelope(peer.0, peer.1);
        let next_hop = envelope.dst_addr;
        body.timestamp = clock.now_ntp()?;
        let bytes = TestDatagram {
            envelope,
            payload: StampPayload::Reflector(body),
        }
        .build()?;
        self.reflected.fetch_add(1, Ordering::Relaxed);
        Ok((next_hop, bytes))
    }
}

/// Reflector node: the session table and the transport replies leave on.
pub struct SessionReflector {
    transport: Arc<dyn Transport>,
    clock: Clock,
    sessions: RwLock<HashMap<u16, Arc<ReflectorSession>>>,
    /// Test packets answered, across all sessions.
    processed: AtomicU64,
    discards: DiscardCounters,
}

impl SessionReflector {
    pub fn new(transport: Arc<dyn Transport>) -> Arc<Self> {
        let clock = transport.clock();
        Arc::new(SessionReflector {
            transport,
            clock,
            sessions: RwLock::new(HashMap::new()),
            processed: AtomicU64::new(0),
            discards: DiscardCounters::default(),
        })
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn session(&self, ssid: u16) -> Result<Arc<ReflectorSession>, SessionError> {
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

    pub fn create_session(
        &self,
        cfg: ReflectorSessionConfig,
    ) -> Result<Arc<ReflectorSession>, SessionError> {
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(&cfg.ssid.get()) {
            return Err(SessionError::DuplicateSsid(cfg.ssid));
        }
        let s = Arc::new(ReflectorSession::new(cfg)?);
        sessions.insert(s.ssid().get(), s.clone());
        Ok(s)
    }

    /// Starts answering. With `duration`, the session stops itself once it
    /// has elapsed.
    pub fn start_session(&self, ssid: u16, duration: Option<Duration>) -> Result<(), SessionError> {
        let s = self.session(ssid)?;
        s.start()?;
        if let Some(d) = duration.filter(|d| !d.is_zero()) {
            let session = s.clone();
            let handle = self.transport.schedule(
                d,
                Box::new(move || {
                    session.auto_stop();
                    ControlFlow::Break(())
                }),
            );
            *s.timer.lock().unwrap() = Some(handle);
        }
        Ok(())
    }

    pub fn stop_session(&self, ssid: u16) -> Result<(), SessionError> {
        self.session(ssid)?.stop()
    }

    /// Removes a session in any state; its SSID becomes free and a new
    /// session under it starts counting from zero.
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

    /// Validates a test datagram received at `t2` and builds the reply.
    pub fn reflect_at(
        &self,
        datagram: &[u8],
        t2: NtpTimestamp,
    ) -> Result<(Ipv6Addr, Vec<u8>), Discard> {
        let d = &self.discards;
        let view = DatagramView::parse(datagram).map_err(|_| d.record(Discard::NotStamp))?;
        let body = view.payload();
        if body.len() < PAYLOAD_LEN || !view.checksum_valid() {
            return Err(d.record(Discard::DecodeError));
        }
        let sender = SenderTestPayload::decode(body)
            .map_err(|_| d.record(Discard::DecodeError))?
            .payload;
        let session = self
            .session(sender.ssid)
            .map_err(|_| d.record(Discard::WrongSsid))?;
        if view.dst_port != session.config.reflector_port {
            return Err(d.record(Discard::NotStamp));
        }
        if session.status() != SessionStatus::Running {
            return Err(d.record(Discard::SessionNotRunning));
        }
        let out = session
            .answer(
                &sender,
                view.hop_limit,
                (view.src_addr, view.src_port),
                t2,
                &self.clock,
            )
            .map_err(|_| d.record(Discard::DecodeError))?;
        self.processed.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    /// [`reflect_at`](Self::reflect_at) with T2 read from the node clock.
    pub fn reflect(&self, datagram: &[u8]) -> Result<(Ipv6Addr, Vec<u8>), Discard> {
        let t2 = self.clock.now_ntp().map_err(|_| self.discards.record(Discard::DecodeError))?;
        self.reflect_at(datagram, t2)
    }

    /// Reflects a batch of datagrams received together, without sending.
    pub fn reflect_batch(
        &self,
        mode: Parallelism,
        datagrams: &[Vec<u8>],
    ) -> Vec<Result<(Ipv6Addr, Vec<u8>), Discard>> {
        let t2 = match unix_nanos_to_ntp(i128::from(self.clock.now_unix_nanos())) {
            Ok(t) => t,
            Err(_) => return datagrams.iter().map(|_| Err(Discard::DecodeError)).collect(),
        };
        exec::map(mode, datagrams, |d| self.reflect_at(d, t2))
    }

    /// Reflects and transmits.
    pub fn on_receive(&self, datagram: &[u8]) -> Result<(), Discard> {
        let (next_hop, reply) = self.reflect(datagram)?;
        if let Err(e) = self.transport.send(next_hop, &reply) {
            log::debug!("reflector send to {next_hop} failed: {e}");
        }
        Ok(())
    }

    pub fn processed(&self) -> u64 {
        self.processed.load(Ordering::Relaxed)
    }

    pub fn discards(&self) -> &DiscardCounters {
        &self.discards
    }
}

impl DatagramConsumer for SessionReflector {
    fn deliver(&self, datagram: &[u8]) {
        let _ = self.on_receive(datagram);
    }
}
