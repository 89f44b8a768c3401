//! TCP control endpoint: one thread per connection, replies in the format
//! of the request.

use std::io::{self, BufReader, BufWriter};
use std::net::{IpAddr, Ipv6Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::message::{ControlReply, ErrorCode};
use super::node::StampNode;
use super::wire::{self, WireError, WireFormat};

pub const DEFAULT_CONTROL_PORT: u16 = 50052;
/// Overrides the control bind address.
pub const ENV_CONTROL_ADDR: &str = "STAMP_CONTROL_ADDR";
/// Overrides the control port.
pub const ENV_CONTROL_PORT: &str = "STAMP_CONTROL_PORT";

/// Resolves the control endpoint from `base` and the environment overrides.
pub fn control_addr_from_env(base: SocketAddr) -> Result<SocketAddr, String> {
    let mut addr = base;
    if let Ok(a) = std::env::var(ENV_CONTROL_ADDR) {
        let ip: IpAddr = a
            .parse()
            .map_err(|_| format!("{ENV_CONTROL_ADDR}: invalid address {a:?}"))?;
        addr.set_ip(ip);
    }
    if let Ok(p) = std::env::var(ENV_CONTROL_PORT) {
        let port: u16 = p
            .parse()
            .map_err(|_| format!("{ENV_CONTROL_PORT}: invalid port {p:?}"))?;
        addr.set_port(port);
    }
    Ok(addr)
}

/// Default endpoint: `[::1]:50052`.
pub fn default_control_addr() -> SocketAddr {
    SocketAddr::new(IpAddr::V6(Ipv6Addr::LOCALHOST), DEFAULT_CONTROL_PORT)
}

pub struct ControlServer {
    addr: SocketAddr,
    running: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ControlServer {
    /// Binds and starts serving `node` in the background.
    pub fn spawn(addr: SocketAddr, node: Arc<StampNode>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let running = Arc::new(AtomicBool::new(true));
        let r = running.clone();
        let accept = std::thread::Builder::new()
            .name("stamp-control".into())
            .spawn(move || accept_loop(listener, node, r))?;
        Ok(ControlServer {
            addr,
            running,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open connections end when their peer
    /// disconnects.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.running.store(false, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, node: Arc<StampNode>, running: Arc<AtomicBool>) {
    while running.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let node = node.clone();
                let _ = std::thread::Builder::new()
                    .name(format!("stamp-control-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &node) {
                            log::debug!("control connection {peer}: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                log::warn!("control accept: {e}");
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn serve_connection(stream: TcpStream, node: &StampNode) -> Result<(), WireError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let Some((tag, body)) = wire::read_frame(&mut reader)? else {
            return Ok(());
        };
        let Some(format) = WireFormat::from_tag(tag) else {
            let rep = ControlReply::error(ErrorCode::Malformed, format!("unknown body format {tag}"));
            wire::write_frame(&mut writer, WireFormat::Binary, &wire::encode_reply_binary(&rep))?;
            continue;
        };
        let rep = match wire::decode_request(&body, format) {
            Ok(req) => node.handle(req),
            Err(e) => ControlReply::error(ErrorCode::Malformed, e.to_string()),
        };
        wire::write_frame(&mut writer, format, &wire::encode_reply(&rep, format))?;
    }
}
