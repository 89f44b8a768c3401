//! Sender/reflector nodes on a sim network, reachable in-process or over
//! TCP loopback.

use std::net::{Ipv6Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use srv6_stamp::control::{
    ControlClient, ControlError, ControlRequest, ControlServer, Controller, Engine, ErrorCode,
    InProcessClient, NodeGlobalConfig, NodeRole, PathSpec, RetryPolicy, SessionSpec, StampNode,
    TcpClient, WireFormat,
};
use srv6_stamp::session::{SessionConfig, SessionStatus, Ssid};
use srv6_stamp::transport::{SimLink, SimNetwork};

pub const S: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 1);
pub const R: Ipv6Addr = Ipv6Addr::new(0xfc00, 0, 0, 0, 0, 0, 0, 2);

pub struct Rig {
    pub net: Arc<SimNetwork>,
    pub sender: Arc<StampNode>,
    pub reflector: Arc<StampNode>,
}

impl Rig {
    /// 5 ms towards the reflector, 7 ms back.
    pub fn new() -> Self {
        let net = SimNetwork::new(0);
        let s = net.add_endpoint(S, 0);
        let r = net.add_endpoint(R, 0);
        net.connect(S, R, SimLink::constant(Duration::from_millis(5)));
        net.connect(R, S, SimLink::constant(Duration::from_millis(7)));
        Rig {
            net,
            sender: StampNode::new(NodeRole::Sender, s),
            reflector: StampNode::new(NodeRole::Reflector, r),
        }
    }

    pub fn inits() -> (NodeGlobalConfig, NodeGlobalConfig) {
        (NodeGlobalConfig::new(S), NodeGlobalConfig::new(R))
    }
}

pub fn session_config(ssid: u16) -> SessionConfig {
    SessionConfig::new(Ssid::new(ssid).unwrap(), S, R, Duration::from_millis(10))
}

/// Binds a control server on IPv6 loopback, or IPv4 loopback where IPv6
/// is unavailable.
pub fn serve(node: Arc<StampNode>) -> ControlServer {
    ControlServer::spawn("[::1]:0".parse().unwrap(), node.clone())
        .or_else(|_| ControlServer::spawn("127.0.0.1:0".parse().unwrap(), node))
        .expect("bind loopback control server")
}

pub fn tcp(addr: SocketAddr, format: WireFormat) -> TcpClient {
    TcpClient::connect(addr, format, Duration::from_secs(5)).expect("connect")
}

pub fn code_of(c: &mut dyn ControlClient, req: ControlRequest) -> Option<ErrorCode> {
    match c.request(&req) {
        Ok(_) => None,
        Err(ControlError::Remote { code, .. }) => Some(code),
        Err(e) => panic!("{} failed outside the protocol: {e}", req.name()),
    }
}

macro_rules! ensure {
    ($c:expr, $($fmt:tt)+) => {
        if !$c {
            return Err(format!($($fmt)+));
        }
    };
}

fn tcp_controller(rig: &Rig, format: WireFormat) -> (Controller, ControlServer, ControlServer) {
    let (ss, rs) = (serve(rig.sender.clone()), serve(rig.reflector.clone()));
    let (si, ri) = Rig::inits();
    let c = Controller::new(
        Box::new(tcp(ss.local_addr(), format)),
        Box::new(tcp(rs.local_addr(), format)),
    )
    .with_init(si, ri)
    .with_retry(RetryPolicy::immediate(1));
    (c, ss, rs)
}

/// Init, create, start, poll, stop, destroy over TCP. Ten probes must come
/// back in one poll and the next poll must be empty.
pub fn lifecycle_sequence(format: WireFormat) -> Result<(), String> {
    let rig = Rig::new();
    let (mut c, ss, rs) = tcp_controller(&rig, format);
    let e = |e: ControlError| e.to_string();
    let ssid = c
        .create_measured_path(&PathSpec::new(S, R, Duration::from_millis(10)))
        .map_err(e)?;
    c.start_path(ssid, None).map_err(e)?;
    for role in [NodeRole::Sender, NodeRole::Reflector] {
        let st = c.status(role, ssid).map_err(e)?.status;
        ensure!(st == SessionStatus::Running, "{role:?} is {st:?} after start");
    }
    // Probes leave at 10, 20, ... 100 ms and return 12 ms later.
    rig.net.run_for(Duration::from_millis(115));
    let recs = c.poll_once(ssid).map_err(e)?;
    ensure!(recs.len() == 10, "first poll returned {} records", recs.len());
    ensure!(c.poll_once(ssid).map_err(e)?.is_empty(), "second poll not empty");
    c.stop_path(ssid).map_err(e)?;
    c.destroy_path(ssid).map_err(e)?;
    for role in [NodeRole::Sender, NodeRole::Reflector] {
        let code = c.status(role, ssid).err().and_then(|e| e.code());
        ensure!(code == Some(ErrorCode::UnknownSsid), "{role:?} still knows the session: {code:?}");
    }
    ss.shutdown();
    rs.shutdown();
    Ok(())
}

/// Every out-of-order request with the error code it must produce, in
/// the order they are sent to a fresh sender node.
pub fn illegal_order_script() -> Vec<(ControlRequest, Option<ErrorCode>)> {
    use ControlRequest::*;
    let spec = || CreateStampSession(SessionSpec::Sender(session_config(5)));
    let start = || StartStampSession { ssid: 5, duration_ns: None };
    let init = || Init(NodeGlobalConfig::new(S));
    let results = || GetStampSessionResults { ssid: 5, max: 10 };
    use ErrorCode::*;
    vec![
        (spec(), Some(NotInitialized)),
        (start(), Some(NotInitialized)),
        (StopStampSession { ssid: 5 }, Some(NotInitialized)),
        (DestroyStampSession { ssid: 5 }, Some(NotInitialized)),
        (results(), Some(NotInitialized)),
        (init(), None),
        (init(), Some(AlreadyInitialized)),
        (start(), Some(UnknownSsid)),
        (StopStampSession { ssid: 5 }, Some(UnknownSsid)),
        (DestroyStampSession { ssid: 5 }, Some(UnknownSsid)),
        (results(), Some(UnknownSsid)),
        (spec(), None),
        (spec(), Some(DuplicateSsid)),
        (StopStampSession { ssid: 5 }, Some(IllegalTransition)),
        (start(), None),
        (start(), Some(IllegalTransition)),
        (DestroyStampSession { ssid: 5 }, Some(IllegalTransition)),
        (StopStampSession { ssid: 5 }, None),
        (StopStampSession { ssid: 5 }, Some(IllegalTransition)),
        (DestroyStampSession { ssid: 5 }, None),
        (results(), Some(UnknownSsid)),
        // Reset is legal in any state, repeatedly.
        (Reset, None),
        (Reset, None),
        (spec(), Some(NotInitialized)),
        (init(), None),
    ]
}

/// Plays the script over TCP in `format`; returns the number of requests
/// answered as expected.
pub fn play_illegal_orders(format: WireFormat) -> Result<usize, String> {
    let rig = Rig::new();
    let server = serve(rig.sender.clone());
    let mut c = tcp(server.local_addr(), format);
    let script = illegal_order_script();
    for (i, (req, want)) in script.iter().enumerate() {
        let name = req.name();
        let got = code_of(&mut c, req.clone());
        ensure!(got == *want, "step {i} {name}: expected {want:?}, got {got:?}");
    }
    server.shutdown();
    Ok(script.len())
}

/// Runs `n` probes at 1 ms while a TCP client polls concurrently, then
/// checks `fetched + queued == enqueued` and FIFO order.
pub fn drain_under_reception(n: u64) -> Result<(), String> {
    let rig = Rig::new();
    let server = serve(rig.sender.clone());
    let (si, ri) = Rig::inits();
    let mut c = Controller::new(
        Box::new(tcp(server.local_addr(), WireFormat::Binary)),
        Box::new(InProcessClient::new(rig.reflector.clone())),
    )
    .with_init(si, ri)
    .with_retry(RetryPolicy::immediate(1));
    let e = |e: ControlError| e.to_string();
    let ssid = c
        .create_measured_path(&PathSpec::new(S, R, Duration::from_millis(1)))
        .map_err(e)?;
    c.start_path(ssid, Some(Duration::from_millis(n))).map_err(e)?;

    let net = rig.net.clone();
    // Advance in slices so polls interleave with record production; the
    // extra 2 s cover the last replies and the collection grace period.
    let slices = (n + 2_000).div_ceil(50);
    let driver = std::thread::spawn(move || {
        for _ in 0..slices {
            net.run_for(Duration::from_millis(50));
            std::thread::yield_now();
        }
    });
    let mut fetched = Vec::new();
    while !driver.is_finished() {
        fetched.extend(c.poll_once(ssid).map_err(e)?);
    }
    driver.join().map_err(|_| "sim thread panicked".to_string())?;

    let Some(Engine::Sender(engine)) = rig.sender.engine() else {
        return Err("sender node has no engine".into());
    };
    let q = engine
        .session(ssid.get())
        .map_err(|e| e.to_string())?
        .queue_counters();
    ensure!(q.enqueued == n, "enqueued {} of {n}", q.enqueued);
    ensure!(q.overflowed == 0, "{} records overflowed", q.overflowed);
    ensure!(
        fetched.len() as u64 + q.queued == q.enqueued,
        "fetched {} + queued {} != enqueued {}",
        fetched.len(),
        q.queued,
        q.enqueued
    );
    fetched.extend(c.poll_once(ssid).map_err(e)?);
    ensure!(fetched.len() as u64 == n, "fetched {} of {n} in total", fetched.len());
    let out_of_order = fetched.iter().enumerate().position(|(i, r)| r.sender_seq as usize != i);
    ensure!(out_of_order.is_none(), "FIFO broken at index {out_of_order:?}");
    let st = c.status(NodeRole::Sender, ssid).map_err(e)?.status;
    ensure!(st == SessionStatus::Stopped, "sender is {st:?} after its duration");
    server.shutdown();
    Ok(())
}
