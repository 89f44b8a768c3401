//! `stampd`: one sender or reflector node behind a control endpoint.

use std::io::Write;
use std::net::{Ipv6Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use srv6_stamp::control::{
    control_addr_from_env, ControlReply, ControlRequest, ControlServer, NodeRole, StampNode,
    TransportFactory,
};
use srv6_stamp::timebase::Clock;
use srv6_stamp::transport::{RawIpv6Transport, Transport, UdpTransport};

use crate::config::{load_json, DaemonConfig, TransportKind};
use crate::exit::{CliError, CliResult, Exit};

#[derive(Debug, Clone)]
pub struct DaemonOptions {
    pub role: NodeRole,
    pub config: Option<PathBuf>,
    pub control: Option<SocketAddr>,
    pub transport: Option<TransportKind>,
    pub src: Option<Ipv6Addr>,
    pub stamp_port: Option<u16>,
}

/// Merges the file with the environment and flags, later sources winning.
pub fn effective_config(opts: &DaemonOptions) -> CliResult<DaemonConfig> {
    let mut cfg: DaemonConfig = match &opts.config {
        Some(p) => load_json(p)?,
        None => DaemonConfig::default(),
    };
    cfg.control_addr =
        control_addr_from_env(cfg.control_addr).map_err(|e| CliError::new(Exit::InvalidInput, e))?;
    if let Some(a) = opts.control {
        cfg.control_addr = a;
    }
    if let Some(t) = opts.transport {
        cfg.transport = t;
    }
    if let Some(init) = cfg.init.as_mut() {
        if let Some(s) = opts.src {
            init.src_ipv6 = s;
        }
        if let Some(p) = opts.stamp_port {
            init.stamp_udp_port = p;
        }
    }
    Ok(cfg)
}

fn factory(kind: TransportKind) -> TransportFactory {
    Box::new(move |cfg| {
        let t: Arc<dyn Transport> = match kind {
            TransportKind::Udp => UdpTransport::new(Clock::host(), cfg.src_ipv6),
            TransportKind::Raw => RawIpv6Transport::new(Clock::host(), cfg.bind_interface.as_deref())?,
        };
        Ok(t)
    })
}

fn apply(node: &StampNode, req: ControlRequest) -> CliResult<()> {
    let name = req.name();
    match node.handle(req) {
        ControlReply::Ok(_) => Ok(()),
        ControlReply::Error { code, message } => {
            Err(CliError::new(Exit::Remote(code), format!("startup {name} failed: {message}")))
        }
    }
}

/// Applies the startup config to a fresh node.
pub fn preload(node: &StampNode, cfg: &DaemonConfig) -> CliResult<()> {
    let Some(init) = &cfg.init else {
        if !cfg.sessions.is_empty() {
            return Err(CliError::new(Exit::InvalidInput, "preloaded sessions need `init`"));
        }
        return Ok(());
    };
    apply(node, ControlRequest::Init(init.clone()))?;
    for s in &cfg.sessions {
        apply(node, ControlRequest::CreateStampSession(s.clone()))?;
    }
    if cfg.start_sessions {
        for s in &cfg.sessions {
            apply(
                node,
                ControlRequest::StartStampSession {
                    ssid: s.ssid(),
                    duration_ns: None,
                },
            )?;
        }
    }
    Ok(())
}

/// Runs until SIGINT or SIGTERM, then destroys every session and exits.
pub fn run(opts: &DaemonOptions) -> CliResult<()> {
    let cfg = effective_config(opts)?;
    let node = StampNode::with_factory(opts.role, factory(cfg.transport));
    preload(&node, &cfg)?;

    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, stop.clone())
            .map_err(|e| CliError::new(Exit::Internal, format!("cannot install signal handler: {e}")))?;
    }
    let server = ControlServer::spawn(cfg.control_addr, node.clone()).map_err(|e| {
        CliError::new(Exit::ControlBind, format!("cannot bind control endpoint {}: {e}", cfg.control_addr))
    })?;
    log::info!("{} daemon, control endpoint {}", opts.role, server.local_addr());
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "{}", server.local_addr())
            .and_then(|_| out.flush())
            .map_err(|e| CliError::new(Exit::WriteOutput, e.to_string()))?;
    }

    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(50));
    }
    log::info!("shutting down");
    node.handle(ControlRequest::Reset);
    server.shutdown();
    Ok(())
}
