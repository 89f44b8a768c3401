//! Controller-side orchestration: set up a measured path on a
//! sender/reflector pair, drive its lifecycle and poll its results.

use std::collections::HashSet;
use std::net::Ipv6Addr;
use std::ops::ControlFlow;
use std::time::Duration;

use super::client::ControlClient;
use super::message::{
    ControlError, ControlRequest, ErrorCode, NodeGlobalConfig, NodeRole, ReplyBody, SessionInfo,
    SessionSpec, RESULTS_PER_REPLY,
};
use crate::codec::STAMP_PORT;
use crate::session::{
    AuthMode, DelayMode, MeasurementRecord, ReflectorMode, SessionConfig, Ssid, TimestampFormat,
};

/// A measured path: the sender-side session parameters plus the return
/// path the reflector is told to use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSpec {
    /// `None` lets the controller allocate one.
    pub ssid: Option<Ssid>,
    pub direct_sids: Vec<Ipv6Addr>,
    pub return_sids: Vec<Ipv6Addr>,
    pub sender_addr: Ipv6Addr,
    pub reflector_addr: Ipv6Addr,
    pub interval: Duration,
    pub sender_port: u16,
    pub reflector_port: u16,
    pub delay_mode: DelayMode,
    pub reflector_mode: ReflectorMode,
    pub auth_mode: AuthMode,
    pub timestamp_format: TimestampFormat,
}

impl PathSpec {
    pub fn new(sender_addr: Ipv6Addr, reflector_addr: Ipv6Addr, interval: Duration) -> Self {
        PathSpec {
            ssid: None,
            direct_sids: Vec::new(),
            return_sids: Vec::new(),
            sender_addr,
            reflector_addr,
            interval,
            sender_port: STAMP_PORT,
            reflector_port: STAMP_PORT,
            delay_mode: DelayMode::default(),
            reflector_mode: ReflectorMode::default(),
            auth_mode: AuthMode::default(),
            timestamp_format: TimestampFormat::default(),
        }
    }

    pub fn sender_config(&self, ssid: Ssid) -> SessionConfig {
        SessionConfig {
            ssid,
            sid_list: self.direct_sids.clone(),
            interval: self.interval,
            src_addr: self.sender_addr,
            auth_mode: self.auth_mode,
            timestamp_format: self.timestamp_format,
            delay_mode: self.delay_mode,
            reflector_addr: self.reflector_addr,
            sender_port: self.sender_port,
            reflector_port: self.reflector_port,
            reflector_mode: self.reflector_mode,
        }
    }
}

/// Retries for requests that fail to reach the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 4,
            initial_backoff: Duration::from_millis(50),
            max_backoff: Duration::from_secs(2),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for simulated time.
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }
}

pub struct Controller {
    sender: Box<dyn ControlClient>,
    reflector: Box<dyn ControlClient>,
    sender_init: Option<NodeGlobalConfig>,
    reflector_init: Option<NodeGlobalConfig>,
    retry: RetryPolicy,
    next_ssid: u16,
    paths: HashSet<u16>,
    gaps: u64,
}

fn is_code(e: &ControlError, code: ErrorCode) -> bool {
    e.code() == Some(code)
}

fn expect_empty(body: ReplyBody) -> Result<(), ControlError> {
    match body {
        ReplyBody::Empty => Ok(()),
        other => Err(ControlError::Protocol(format!("unexpected reply {other:?}"))),
    }
}

impl Controller {
    pub fn new(sender: Box<dyn ControlClient>, reflector: Box<dyn ControlClient>) -> Self {
        Controller {
            sender,
            reflector,
            sender_init: None,
            reflector_init: None,
            retry: RetryPolicy::default(),
            next_ssid: 1,
            paths: HashSet::new(),
            gaps: 0,
        }
    }

    /// Global configs sent with `Init` before the first path is created.
    pub fn with_init(mut self, sender: NodeGlobalConfig, reflector: NodeGlobalConfig) -> Self {
        self.sender_init = Some(sender);
        self.reflector_init = Some(reflector);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn client(&mut self, role: NodeRole) -> &mut dyn ControlClient {
        match role {
            NodeRole::Sender => self.sender.as_mut(),
            NodeRole::Reflector => self.reflector.as_mut(),
        }
    }

    /// Polls that failed after all retries.
    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    /// Sends `Init` to both nodes; already-initialised nodes are accepted.
    pub fn init_nodes(&mut self) -> Result<(), ControlError> {
        for role in [NodeRole::Reflector, NodeRole::Sender] {
            let cfg = match role {
                NodeRole::Sender => self.sender_init.clone(),
                NodeRole::Reflector => self.reflector_init.clone(),
            };
            if let Some(cfg) = cfg {
                match self.client(role).request(&ControlRequest::Init(cfg)) {
                    Ok(b) => expect_empty(b)?,
                    Err(e) if is_code(&e, ErrorCode::AlreadyInitialized) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    fn allocate_ssid(&mut self) -> Ssid {
        loop {
            let candidate = self.next_ssid;
            self.next_ssid = self.next_ssid.checked_add(1).unwrap_or(1);
            if let Some(s) = Ssid::new(candidate) {
                if !self.paths.contains(&candidate) {
                    return s;
                }
            }
        }
    }

    /// Creates the reflector session, then the sender session, with the
    /// same SSID and mirrored ports. A failed sender creation removes the
    /// reflector session again.
    pub fn create_measured_path(&mut self, spec: &PathSpec) -> Result<Ssid, ControlError> {
        self.init_nodes()?;
        let auto = spec.ssid.is_none();
        let mut tries = if auto { 64 } else { 1 };
        loop {
            let ssid = spec.ssid.unwrap_or_else(|| self.allocate_ssid());
            match self.try_create(spec, ssid) {
                Ok(()) => {
                    self.paths.insert(ssid.get());
                    return Ok(ssid);
                }
                Err(e) if auto && is_code(&e, ErrorCode::DuplicateSsid) && tries > 1 => tries -= 1,
                Err(e) => return Err(e),
            }
        }
    }

    fn try_create(&mut self, spec: &PathSpec, ssid: Ssid) -> Result<(), ControlError> {
        let sender_cfg = spec.sender_config(ssid);
        let reflector_cfg = sender_cfg.reflector_side(spec.return_sids.clone());
        expect_empty(
            self.reflector
                .request(&ControlRequest::CreateStampSession(SessionSpec::Reflector(reflector_cfg)))?,
        )?;
        let created = self
            .sender
            .request(&ControlRequest::CreateStampSession(SessionSpec::Sender(sender_cfg)))
            .and_then(expect_empty);
        if let Err(e) = created {
            if let Err(rb) = self
                .reflector
                .request(&ControlRequest::DestroyStampSession { ssid: ssid.get() })
            {
                log::warn!("rollback of reflector session {ssid} failed: {rb}");
            }
            return Err(e);
        }
        Ok(())
    }

    /// Starts the reflector session, then the sender session. The sender
    /// stops itself after `duration` when given; the reflector keeps
    /// answering until stopped.
    pub fn start_path(&mut self, ssid: Ssid, duration: Option<Duration>) -> Result<(), ControlError> {
        expect_empty(self.reflector.request(&ControlRequest::StartStampSession {
            ssid: ssid.get(),
            duration_ns: None,
        })?)?;
        expect_empty(self.sender.request(&ControlRequest::StartStampSession {
            ssid: ssid.get(),
            duration_ns: duration.map(|d| d.as_nanos() as u64),
        })?)
    }

    /// Stops both sessions; sessions that already stopped are fine.
    pub fn stop_path(&mut self, ssid: Ssid) -> Result<(), ControlError> {
        for role in [NodeRole::Sender, NodeRole::Reflector] {
            match self
                .client(role)
                .request(&ControlRequest::StopStampSession { ssid: ssid.get() })
            {
                Ok(b) => expect_empty(b)?,
                Err(e) if is_code(&e, ErrorCode::IllegalTransition) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Destroys both sessions, sender first.
    pub fn destroy_path(&mut self, ssid: Ssid) -> Result<(), ControlError> {
        self.paths.remove(&ssid.get());
        let req = ControlRequest::DestroyStampSession { ssid: ssid.get() };
        let s = self.sender.request(&req).and_then(expect_empty);
        let r = self.reflector.request(&req).and_then(expect_empty);
        s.and(r)
    }

    pub fn status(&mut self, role: NodeRole, ssid: Ssid) -> Result<SessionInfo, ControlError> {
        match self
            .client(role)
            .request(&ControlRequest::GetStampSessionStatus { ssid: ssid.get() })?
        {
            ReplyBody::Status(i) => Ok(i),
            other => Err(ControlError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn processed_count(&mut self, role: NodeRole) -> Result<u64, ControlError> {
        match self.client(role).request(&ControlRequest::GetProcessedCount)? {
            ReplyBody::ProcessedCount { processed } => Ok(processed),
            other => Err(ControlError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    fn fetch_with_retry(&mut self, ssid: u16) -> Result<(Vec<MeasurementRecord>, bool), ControlError> {
        let req = ControlRequest::GetStampSessionResults {
            ssid,
            max: RESULTS_PER_REPLY,
        };
        let mut backoff = self.retry.initial_backoff;
        let mut last = None;
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 && !backoff.is_zero() {
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(self.retry.max_backoff);
            }
            match self.sender.request(&req) {
                Ok(ReplyBody::Results { records, more }) => return Ok((records, more)),
                Ok(other) => return Err(ControlError::Protocol(format!("unexpected reply {other:?}"))),
                Err(e @ ControlError::Remote { .. }) => return Err(e),
                Err(e) => last = Some(e),
            }
        }
        self.gaps += 1;
        Err(last.expect("at least one attempt"))
    }

    /// Drains the sender's result queue for `ssid`.
    pub fn poll_once(&mut self, ssid: Ssid) -> Result<Vec<MeasurementRecord>, ControlError> {
        let mut all = Vec::new();
        loop {
            let (batch, more) = self.fetch_with_retry(ssid.get())?;
            all.extend(batch);
            if !more {
                return Ok(all);
            }
        }
    }

    /// Polls every `period` and hands each batch to `sink` until it breaks.
    /// Unreachable endpoints count as gaps and polling continues; error
    /// replies end the loop.
    pub fn poll_results(
        &mut self,
        ssid: Ssid,
        period: Duration,
        mut sink: impl FnMut(Vec<MeasurementRecord>) -> ControlFlow<()>,
    ) -> Result<(), ControlError> {
        loop {
            std::thread::sleep(period);
            match self.poll_once(ssid) {
                Ok(batch) => {
                    if sink(batch).is_break() {
                        return Ok(());
                    }
                }
                Err(e @ ControlError::Remote { .. }) => return Err(e),
                Err(e) => log::warn!("poll of session {ssid} failed: {e}"),
            }
        }
    }
}
