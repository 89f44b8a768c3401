//! Control clients: in-process (direct dispatch, optionally through the
//! wire codec) and TCP.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use super::message::{ControlError, ControlReply, ControlRequest, ReplyBody};
use super::node::StampNode;
use super::wire::{self, WireError, WireFormat};

pub trait ControlClient: Send {
    /// One request, one reply. Transport failures are `Unreachable` or
    /// `Protocol`; error replies come back as `Ok(ControlReply::Error)`.
    fn call(&mut self, req: &ControlRequest) -> Result<ControlReply, ControlError>;

    /// [`call`](Self::call) with error replies folded into `Err`.
    fn request(&mut self, req: &ControlRequest) -> Result<ReplyBody, ControlError> {
        self.call(req)?.into_result()
    }
}

impl<C: ControlClient + ?Sized> ControlClient for Box<C> {
    fn call(&mut self, req: &ControlRequest) -> Result<ControlReply, ControlError> {
        (**self).call(req)
    }
}

/// Calls a node in the same process.
pub struct InProcessClient {
    node: Arc<StampNode>,
    via: Option<WireFormat>,
}

impl InProcessClient {
    pub fn new(node: Arc<StampNode>) -> Self {
        InProcessClient { node, via: None }
    }

    /// Passes every request and reply through the given body encoding.
    pub fn encoded(node: Arc<StampNode>, format: WireFormat) -> Self {
        InProcessClient {
            node,
            via: Some(format),
        }
    }

    pub fn node(&self) -> &Arc<StampNode> {
        &self.node
    }
}

fn protocol(e: WireError) -> ControlError {
    ControlError::Protocol(e.to_string())
}

impl ControlClient for InProcessClient {
    fn call(&mut self, req: &ControlRequest) -> Result<ControlReply, ControlError> {
        match self.via {
            None => Ok(self.node.handle(req.clone())),
            Some(f) => {
                let req = wire::decode_request(&wire::encode_request(req, f), f).map_err(protocol)?;
                let rep = self.node.handle(req);
                wire::decode_reply(&wire::encode_reply(&rep, f), f).map_err(protocol)
            }
        }
    }
}

pub struct TcpClient {
    peer: SocketAddr,
    format: WireFormat,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs, format: WireFormat, timeout: Duration) -> Result<Self, ControlError> {
        let unreachable = |e: std::io::Error| ControlError::Unreachable(e.to_string());
        let peer = addr
            .to_socket_addrs()
            .map_err(unreachable)?
            .next()
            .ok_or_else(|| ControlError::Unreachable("address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&peer, timeout).map_err(unreachable)?;
        stream.set_nodelay(true).map_err(unreachable)?;
        stream.set_read_timeout(Some(timeout)).map_err(unreachable)?;
        let reader = BufReader::new(stream.try_clone().map_err(unreachable)?);
        Ok(TcpClient {
            peer,
            format,
            reader,
            writer: BufWriter::new(stream),
        })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }
}

impl ControlClient for TcpClient {
    fn call(&mut self, req: &ControlRequest) -> Result<ControlReply, ControlError> {
        let body = wire::encode_request(req, self.format);
        wire::write_frame(&mut self.writer, self.format, &body)
            .map_err(|e| ControlError::Unreachable(e.to_string()))?;
        let (tag, body) = match wire::read_frame(&mut self.reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Err(ControlError::Unreachable("connection closed".into())),
            Err(WireError::Io(e)) => return Err(ControlError::Unreachable(e.to_string())),
            Err(e) => return Err(protocol(e)),
        };
        let format = WireFormat::from_tag(tag)
            .ok_or_else(|| ControlError::Protocol(format!("unknown reply format {tag}")))?;
        wire::decode_reply(&body, format).map_err(protocol)
    }
}
