//! A STAMP node as seen by the controller: one role, one transport, and
//! the request dispatcher behind the control endpoint.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::message::{
    ControlReply, ControlRequest, ErrorCode, NodeGlobalConfig, NodeRole, ReplyBody, SessionInfo,
    SessionSpec, RESULTS_PER_REPLY,
};
use crate::reflector::SessionReflector;
use crate::sender::SessionSender;
use crate::session::{SessionError, SessionStatus};
use crate::transport::{DatagramConsumer, FilterSpec, Registration, Transport, TransportError};

/// Opens the packet transport when a node is initialised.
pub type TransportFactory =
    Box<dyn Fn(&NodeGlobalConfig) -> Result<Arc<dyn Transport>, TransportError> + Send + Sync>;

#[derive(Clone)]
pub enum Engine {
    Sender(Arc<SessionSender>),
    Reflector(Arc<SessionReflector>),
}

impl Engine {
    fn consumer(&self) -> Arc<dyn DatagramConsumer> {
        match self {
            Engine::Sender(s) => s.clone(),
            Engine::Reflector(r) => r.clone(),
        }
    }

    fn processed(&self) -> u64 {
        match self {
            Engine::Sender(s) => s.processed(),
            Engine::Reflector(r) => r.processed(),
        }
    }

    fn destroy_all(&self) {
        match self {
            Engine::Sender(s) => s.destroy_all(),
            Engine::Reflector(r) => r.destroy_all(),
        }
    }
}

struct Active {
    config: NodeGlobalConfig,
    transport: Arc<dyn Transport>,
    engine: Engine,
    /// STAMP filters installed, by UDP port.
    filters: HashMap<u16, Registration>,
}

impl Active {
    fn ensure_filter(&mut self, port: u16) -> Result<(), TransportError> {
        if self.filters.contains_key(&port) {
            return Ok(());
        }
        let local = (!self.config.src_ipv6.is_unspecified()).then_some(self.config.src_ipv6);
        let reg = self
            .transport
            .register(FilterSpec::new(local, port), self.engine.consumer())?;
        self.filters.insert(port, reg);
        Ok(())
    }

    fn teardown(self) {
        self.engine.destroy_all();
        for (_, reg) in self.filters {
            self.transport.unregister(reg);
        }
    }
}

pub struct StampNode {
    role: NodeRole,
    factory: TransportFactory,
    queue_capacity: usize,
    state: Mutex<Option<Active>>,
}

fn not_initialized() -> ControlReply {
    ControlReply::error(ErrorCode::NotInitialized, "node is not initialised; send Init first")
}

impl StampNode {
    /// A node whose transport already exists (simulated endpoints, tests).
    pub fn new(role: NodeRole, transport: Arc<dyn Transport>) -> Arc<Self> {
        Self::with_factory(role, Box::new(move |_| Ok(transport.clone())))
    }

    pub fn with_factory(role: NodeRole, factory: TransportFactory) -> Arc<Self> {
        Arc::new(StampNode {
            role,
            factory,
            queue_capacity: crate::sender::DEFAULT_QUEUE_CAPACITY,
            state: Mutex::new(None),
        })
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn is_initialized(&self) -> bool {
        self.state.lock().unwrap().is_some()
    }

    pub fn global_config(&self) -> Option<NodeGlobalConfig> {
        self.state.lock().unwrap().as_ref().map(|a| a.config.clone())
    }

    /// The engine created by `Init`, for in-process inspection.
    pub fn engine(&self) -> Option<Engine> {
        self.state.lock().unwrap().as_ref().map(|a| a.engine.clone())
    }

    /// Serves one request. Every request yields exactly one reply.
    pub fn handle(&self, req: ControlRequest) -> ControlReply {
        let mut state = self.state.lock().unwrap();
        match req {
            ControlRequest::Init(config) => {
                if state.is_some() {
                    return ControlReply::error(
                        ErrorCode::AlreadyInitialized,
                        "node already initialised; send Reset first",
                    );
                }
                if config.stamp_udp_port == 0 {
                    return ControlReply::error(ErrorCode::InvalidConfig, "stamp_udp_port must be nonzero");
                }
                let transport = match (self.factory)(&config) {
                    Ok(t) => t,
                    Err(e) => return ControlReply::error(ErrorCode::Transport, e.to_string()),
                };
                let engine = match self.role {
                    NodeRole::Sender => Engine::Sender(SessionSender::with_queue_capacity(
                        transport.clone(),
                        self.queue_capacity,
                    )),
                    NodeRole::Reflector => Engine::Reflector(SessionReflector::new(transport.clone())),
                };
                let mut active = Active {
                    config: config.clone(),
                    transport,
                    engine,
                    filters: HashMap::new(),
                };
                if let Err(e) = active.ensure_filter(config.stamp_udp_port) {
                    active.teardown();
                    return ControlReply::error(ErrorCode::Transport, e.to_string());
                }
                *state = Some(active);
                ControlReply::ok()
            }
            ControlRequest::Reset => {
                if let Some(active) = state.take() {
                    active.teardown();
                }
                ControlReply::ok()
            }
            other => match state.as_mut() {
                None => not_initialized(),
                Some(active) => self.session_op(active, other),
            },
        }
    }

    fn session_op(&self, active: &mut Active, req: ControlRequest) -> ControlReply {
        let engine = active.engine.clone();
        let result = match (req, &engine) {
            (ControlRequest::CreateStampSession(spec), _) if spec.role() != self.role => {
                return ControlReply::error(
                    ErrorCode::Unsupported,
                    format!("{} sessions cannot be created on a {} node", spec.role(), self.role),
                );
            }
            (ControlRequest::CreateStampSession(SessionSpec::Sender(cfg)), Engine::Sender(s)) => {
                let port = cfg.sender_port;
                s.create_session(cfg).map(|_| port)
            }
            (ControlRequest::CreateStampSession(SessionSpec::Reflector(cfg)), Engine::Reflector(r)) => {
                let port = cfg.reflector_port;
                r.create_session(cfg).map(|_| port)
            }
            (ControlRequest::CreateStampSession(_), _) => unreachable!("role checked above"),
            (ControlRequest::StartStampSession { ssid, duration_ns }, e) => {
                let d = duration_ns.map(Duration::from_nanos);
                return reply(match e {
                    Engine::Sender(s) => s.start_session(ssid, d),
                    Engine::Reflector(r) => r.start_session(ssid, d),
                });
            }
            (ControlRequest::StopStampSession { ssid }, e) => {
                return reply(match e {
                    Engine::Sender(s) => s.stop_session(ssid),
                    Engine::Reflector(r) => r.stop_session(ssid),
                });
            }
            (ControlRequest::DestroyStampSession { ssid }, e) => {
                let status = match e {
                    Engine::Sender(s) => s.session(ssid).map(|x| x.status()),
                    Engine::Reflector(r) => r.session(ssid).map(|x| x.status()),
                };
                if status == Ok(SessionStatus::Running) {
                    return SessionError::IllegalTransition {
                        from: SessionStatus::Running,
                        op: "destroy",
                    }
                    .into();
                }
                return reply(match e {
                    Engine::Sender(s) => s.destroy_session(ssid),
                    Engine::Reflector(r) => r.destroy_session(ssid),
                });
            }
            (ControlRequest::GetStampSessionResults { ssid, max }, Engine::Sender(s)) => {
                let session = match s.session(ssid) {
                    Ok(x) => x,
                    Err(e) => return e.into(),
                };
                let records = session.fetch_results(max.min(RESULTS_PER_REPLY) as usize);
                let more = session.queue_counters().queued > 0;
                return ControlReply::Ok(ReplyBody::Results { records, more });
            }
            (ControlRequest::GetStampSessionResults { .. }, Engine::Reflector(_)) => {
                return ControlReply::error(
                    ErrorCode::Unsupported,
                    "GetStampSessionResults is supported only by the Session-Sender",
                );
            }
            (ControlRequest::GetStampSessionStatus { ssid }, e) => {
                let info = match e {
                    Engine::Sender(s) => s.session(ssid).map(|x| SessionInfo {
                        ssid,
                        role: NodeRole::Sender,
                        status: x.status(),
                        packets: x.stats.sent.load(std::sync::atomic::Ordering::Relaxed),
                        queued: x.queue_counters().queued,
                    }),
                    Engine::Reflector(r) => r.session(ssid).map(|x| SessionInfo {
                        ssid,
                        role: NodeRole::Reflector,
                        status: x.status(),
                        packets: x.reflected(),
                        queued: 0,
                    }),
                };
                return match info {
                    Ok(i) => ControlReply::Ok(ReplyBody::Status(i)),
                    Err(e) => e.into(),
                };
            }
            (ControlRequest::GetProcessedCount, e) => {
                return ControlReply::Ok(ReplyBody::ProcessedCount {
                    processed: e.processed(),
                })
            }
            (ControlRequest::Init(_) | ControlRequest::Reset, _) => unreachable!("handled by caller"),
        };
        match result {
            Ok(port) => match active.ensure_filter(port) {
                Ok(()) => ControlReply::ok(),
                Err(e) => ControlReply::error(ErrorCode::Transport, e.to_string()),
            },
            Err(e) => e.into(),
        }
    }
}

fn reply(r: Result<(), crate::session::SessionError>) -> ControlReply {
    match r {
        Ok(()) => ControlReply::ok(),
        Err(e) => e.into(),
    }
}

impl Drop for StampNode {
    fn drop(&mut self) {
        if let Some(active) = self.state.get_mut().ok().and_then(Option::take) {
            active.teardown();
        }
    }
}
