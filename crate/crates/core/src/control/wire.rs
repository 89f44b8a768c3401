//! Control message framing and body encodings.
//!
//! A frame is a 4-byte big-endian length, a 1-byte format tag and the body.
//! The length counts the format byte and the body. Bodies are either the
//! canonical binary encoding below or JSON. Field order and numeric codes
//! are tabulated in `docs/control-schema.md`.

use std::io::{self, Read, Write};
use std::net::Ipv6Addr;
use std::time::Duration;

use super::message::{
    ControlReply, ControlRequest, ErrorCode, NodeGlobalConfig, NodeRole, ReplyBody, SessionInfo,
    SessionSpec,
};
use crate::codec::{NtpTimestamp, MAX_SEGMENTS};
use crate::session::{
    AuthMode, DelayMode, MeasurementRecord, ReflectorMode, ReflectorSessionConfig, SessionConfig,
    SessionStatus, Ssid, TimestampFormat,
};

/// Frames larger than this are rejected without reading the body.
pub const MAX_FRAME_LEN: u32 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireFormat {
    #[default]
    Binary = 0,
    Json = 1,
}

impl WireFormat {
    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(WireFormat::Binary),
            1 => Some(WireFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(u32),
    #[error("unknown body format {0}")]
    UnknownFormat(u8),
    #[error("malformed body: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::Malformed(msg.into())
}

pub fn write_frame(w: &mut impl Write, format: WireFormat, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len() + 1)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut buf = Vec::with_capacity(body.len() + 5);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.push(format as u8);
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on clean end of stream before a frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(u8, Vec<u8>)>, WireError> {
    let mut hdr = [0u8; 4];
    match r.read_exact(&mut hdr) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(hdr);
    if len == 0 {
        return Err(malformed("empty frame"));
    }
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let tag = body.remove(0);
    Ok(Some((tag, body)))
}

// ---- binary primitives ----

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn addr(&mut self, a: Ipv6Addr) {
        self.0.extend_from_slice(&a.octets());
    }
    fn addrs(&mut self, v: &[Ipv6Addr]) {
        self.u8(v.len() as u8);
        for &a in v {
            self.addr(a);
        }
    }
    fn ts(&mut self, t: NtpTimestamp) {
        self.0.extend_from_slice(&t.to_bytes());
    }
    fn string(&mut self, s: &str) {
        let b = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
        self.u16(b.len() as u16);
        self.0.extend_from_slice(b);
    }
}

struct In<'a> {
    b: &'a [u8],
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.b.len() < n {
            return Err(malformed("truncated body"));
        }
        let (h, t) = self.b.split_at(n);
        self.b = t;
        Ok(h)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn addr(&mut self) -> Result<Ipv6Addr, WireError> {
        let o: [u8; 16] = self.take(16)?.try_into().unwrap();
        Ok(Ipv6Addr::from(o))
    }
    fn addrs(&mut self) -> Result<Vec<Ipv6Addr>, WireError> {
        let n = self.u8()? as usize;
        if n > MAX_SEGMENTS {
            return Err(malformed("segment list longer than 16"));
        }
        (0..n).map(|_| self.addr()).collect()
    }
    fn ts(&mut self) -> Result<NtpTimestamp, WireError> {
        Ok(NtpTimestamp::from_slice(self.take(8)?))
    }
    fn string(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
    fn ssid(&mut self) -> Result<Ssid, WireError> {
        Ssid::new(self.u16()?).ok_or_else(|| malformed("ssid must be nonzero"))
    }
    fn flag(&mut self, what: &str) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(malformed(format!("{what}: invalid value {v}"))),
        }
    }
    fn finish(self) -> Result<(), WireError> {
        if self.b.is_empty() {
            Ok(())
        } else {
            Err(malformed("trailing bytes"))
        }
    }
}

mod op {
    pub const INIT: u8 = 1;
    pub const RESET: u8 = 2;
    pub const CREATE: u8 = 3;
    pub const START: u8 = 4;
    pub const STOP: u8 = 5;
    pub const DESTROY: u8 = 6;
    pub const RESULTS: u8 = 7;
    pub const STATUS: u8 = 8;
    pub const PROCESSED: u8 = 9;
}

fn auth_code(a: AuthMode) -> u8 {
    match a {
        AuthMode::Unauthenticated => 0,
        AuthMode::Authenticated => 1,
    }
}

fn auth_from(v: u8) -> Result<AuthMode, WireError> {
    match v {
        0 => Ok(AuthMode::Unauthenticated),
        1 => Ok(AuthMode::Authenticated),
        _ => Err(malformed("auth_mode")),
    }
}

fn ts_code(f: TimestampFormat) -> u8 {
    match f {
        TimestampFormat::Ntp => 0,
        TimestampFormat::Ptpv2 => 1,
    }
}

fn ts_from(v: u8) -> Result<TimestampFormat, WireError> {
    match v {
        0 => Ok(TimestampFormat::Ntp),
        1 => Ok(TimestampFormat::Ptpv2),
        _ => Err(malformed("timestamp_format")),
    }
}

fn mode_code(m: ReflectorMode) -> u8 {
    match m {
        ReflectorMode::Stateless => 0,
        ReflectorMode::Stateful => 1,
    }
}

fn mode_from(v: u8) -> Result<ReflectorMode, WireError> {
    match v {
        0 => Ok(ReflectorMode::Stateless),
        1 => Ok(ReflectorMode::Stateful),
        _ => Err(malformed("reflector_mode")),
    }
}

fn status_code(s: SessionStatus) -> u8 {
    match s {
        SessionStatus::Created => 0,
        SessionStatus::Running => 1,
        SessionStatus::Stopped => 2,
    }
}

fn status_from(v: u8) -> Result<SessionStatus, WireError> {
    match v {
        0 => Ok(SessionStatus::Created),
        1 => Ok(SessionStatus::Running),
        2 => Ok(SessionStatus::Stopped),
        _ => Err(malformed("session status")),
    }
}

fn put_sender(o: &mut Out, c: &SessionConfig) {
    o.u16(c.ssid.get());
    o.addrs(&c.sid_list);
    o.u64(c.interval.as_nanos() as u64);
    o.addr(c.src_addr);
    o.u8(auth_code(c.auth_mode));
    o.u8(ts_code(c.timestamp_format));
    o.u8(match c.delay_mode {
        DelayMode::OneWay => 0,
        DelayMode::TwoWay => 1,
    });
    o.addr(c.reflector_addr);
    o.u16(c.sender_port);
    o.u16(c.reflector_port);
    o.u8(mode_code(c.reflector_mode));
}

fn get_sender(i: &mut In<'_>) -> Result<SessionConfig, WireError> {
    Ok(SessionConfig {
        ssid: i.ssid()?,
        sid_list: i.addrs()?,
        interval: Duration::from_nanos(i.u64()?),
        src_addr: i.addr()?,
        auth_mode: auth_from(i.u8()?)?,
        timestamp_format: ts_from(i.u8()?)?,
        delay_mode: match i.u8()? {
            0 => DelayMode::OneWay,
            1 => DelayMode::TwoWay,
            _ => return Err(malformed("delay_mode")),
        },
        reflector_addr: i.addr()?,
        sender_port: i.u16()?,
        reflector_port: i.u16()?,
        reflector_mode: mode_from(i.u8()?)?,
    })
}

fn put_reflector(o: &mut Out, c: &ReflectorSessionConfig) {
    o.u16(c.ssid.get());
    o.addrs(&c.return_sid_list);
    o.addr(c.reflector_addr);
    match c.sender_addr {
        Some(a) => {
            o.u8(1);
            o.addr(a);
        }
        None => o.u8(0),
    }
    o.u16(c.reflector_port);
    o.u8(mode_code(c.mode));
    o.u8(auth_code(c.auth_mode));
    o.u8(ts_code(c.timestamp_format));
}

fn get_reflector(i: &mut In<'_>) -> Result<ReflectorSessionConfig, WireError> {
    let ssid = i.ssid()?;
    let return_sid_list = i.addrs()?;
    let reflector_addr = i.addr()?;
    let sender_addr = if i.flag("sender_addr present")? {
        Some(i.addr()?)
    } else {
        None
    };
    Ok(ReflectorSessionConfig {
        ssid,
        return_sid_list,
        reflector_addr,
        sender_addr,
        reflector_port: i.u16()?,
        mode: mode_from(i.u8()?)?,
        auth_mode: auth_from(i.u8()?)?,
        timestamp_format: ts_from(i.u8()?)?,
    })
}

/// Encoded size of one measurement record.
pub const RECORD_LEN: usize = 51;

fn put_record(o: &mut Out, r: &MeasurementRecord) {
    o.u16(r.ssid);
    o.u32(r.sender_seq);
    o.u32(r.reflector_seq);
    o.ts(r.t1);
    o.ts(r.t2);
    o.ts(r.t3);
    o.ts(r.t4);
    o.u8(r.sender_ttl);
    o.u64(r.received_at as u64);
}

fn get_record(i: &mut In<'_>) -> Result<MeasurementRecord, WireError> {
    Ok(MeasurementRecord {
        ssid: i.u16()?,
        sender_seq: i.u32()?,
        reflector_seq: i.u32()?,
        t1: i.ts()?,
        t2: i.ts()?,
        t3: i.ts()?,
        t4: i.ts()?,
        sender_ttl: i.u8()?,
        received_at: i.u64()? as i64,
    })
}

pub fn encode_request_binary(req: &ControlRequest) -> Vec<u8> {
    let mut o = Out(Vec::with_capacity(64));
    match req {
        ControlRequest::Init(g) => {
            o.u8(op::INIT);
            o.u16(g.stamp_udp_port);
            o.string(g.bind_interface.as_deref().unwrap_or(""));
            o.addr(g.src_ipv6);
        }
        ControlRequest::Reset => o.u8(op::RESET),
        ControlRequest::CreateStampSession(spec) => {
            o.u8(op::CREATE);
            match spec {
                SessionSpec::Sender(c) => {
                    o.u8(0);
                    put_sender(&mut o, c);
                }
                SessionSpec::Reflector(c) => {
                    o.u8(1);
                    put_reflector(&mut o, c);
                }
            }
        }
        ControlRequest::StartStampSession { ssid, duration_ns } => {
            o.u8(op::START);
            o.u16(*ssid);
            o.u64(duration_ns.unwrap_or(0));
        }
        ControlRequest::StopStampSession { ssid } => {
            o.u8(op::STOP);
            o.u16(*ssid);
        }
        ControlRequest::DestroyStampSession { ssid } => {
            o.u8(op::DESTROY);
            o.u16(*ssid);
        }
        ControlRequest::GetStampSessionResults { ssid, max } => {
            o.u8(op::RESULTS);
            o.u16(*ssid);
            o.u32(*max);
        }
        ControlRequest::GetStampSessionStatus { ssid } => {
            o.u8(op::STATUS);
            o.u16(*ssid);
        }
        ControlRequest::GetProcessedCount => o.u8(op::PROCESSED),
    }
    o.0
}

pub fn decode_request_binary(b: &[u8]) -> Result<ControlRequest, WireError> {
    let mut i = In { b };
    let req = match i.u8()? {
        op::INIT => {
            let stamp_udp_port = i.u16()?;
            let iface = i.string()?;
            ControlRequest::Init(NodeGlobalConfig {
                stamp_udp_port,
                bind_interface: (!iface.is_empty()).then_some(iface),
                src_ipv6: i.addr()?,
            })
        }
        op::RESET => ControlRequest::Reset,
        op::CREATE => ControlRequest::CreateStampSession(match i.u8()? {
            0 => SessionSpec::Sender(get_sender(&mut i)?),
            1 => SessionSpec::Reflector(get_reflector(&mut i)?),
            _ => return Err(malformed("session role")),
        }),
        op::START => {
            let ssid = i.u16()?;
            let d = i.u64()?;
            ControlRequest::StartStampSession {
                ssid,
                duration_ns: (d != 0).then_some(d),
            }
        }
        op::STOP => ControlRequest::StopStampSession { ssid: i.u16()? },
        op::DESTROY => ControlRequest::DestroyStampSession { ssid: i.u16()? },
        op::RESULTS => ControlRequest::GetStampSessionResults {
            ssid: i.u16()?,
            max: i.u32()?,
        },
        op::STATUS => ControlRequest::GetStampSessionStatus { ssid: i.u16()? },
        op::PROCESSED => ControlRequest::GetProcessedCount,
        v => return Err(malformed(format!("unknown operation {v}"))),
    };
    i.finish()?;
    Ok(req)
}

pub fn encode_reply_binary(rep: &ControlReply) -> Vec<u8> {
    let mut o = Out(Vec::with_capacity(16));
    match rep {
        ControlReply::Error { code, message } => {
            o.u8(1);
            o.u16(code.to_wire());
            o.string(message);
        }
        ControlReply::Ok(body) => {
            o.u8(0);
            match body {
                ReplyBody::Empty => o.u8(0),
                ReplyBody::Results { records, more } => {
                    o.u8(1);
                    o.u8(u8::from(*more));
                    o.u32(records.len() as u32);
                    o.0.reserve(records.len() * RECORD_LEN);
                    for r in records {
                        put_record(&mut o, r);
                    }
                }
                ReplyBody::Status(s) => {
                    o.u8(2);
                    o.u16(s.ssid);
                    o.u8(match s.role {
                        NodeRole::Sender => 0,
                        NodeRole::Reflector => 1,
                    });
                    o.u8(status_code(s.status));
                    o.u64(s.packets);
                    o.u64(s.queued);
                }
                ReplyBody::ProcessedCount { processed } => {
                    o.u8(3);
                    o.u64(*processed);
                }
            }
        }
    }
    o.0
}

pub fn decode_reply_binary(b: &[u8]) -> Result<ControlReply, WireError> {
    let mut i = In { b };
    let rep = match i.u8()? {
        1 => {
            let raw = i.u16()?;
            let code = ErrorCode::from_wire(raw)
                .ok_or_else(|| malformed(format!("unknown error code {raw}")))?;
            ControlReply::Error {
                code,
                message: i.string()?,
            }
        }
        0 => ControlReply::Ok(match i.u8()? {
            0 => ReplyBody::Empty,
            1 => {
                let more = i.flag("more")?;
                let n = i.u32()? as usize;
                if n.saturating_mul(RECORD_LEN) > i.b.len() {
                    return Err(malformed("record count exceeds body"));
                }
                let records = (0..n).map(|_| get_record(&mut i)).collect::<Result<_, _>>()?;
                ReplyBody::Results { records, more }
            }
            2 => ReplyBody::Status(SessionInfo {
                ssid: i.u16()?,
                role: match i.u8()? {
                    0 => NodeRole::Sender,
                    1 => NodeRole::Reflector,
                    _ => return Err(malformed("role")),
                },
                status: status_from(i.u8()?)?,
                packets: i.u64()?,
                queued: i.u64()?,
            }),
            3 => ReplyBody::ProcessedCount {
                processed: i.u64()?,
            },
            v => return Err(malformed(format!("unknown reply kind {v}"))),
        }),
        v => return Err(malformed(format!("unknown reply status {v}"))),
    };
    i.finish()?;
    Ok(rep)
}

pub fn encode_request(req: &ControlRequest, f: WireFormat) -> Vec<u8> {
    match f {
        WireFormat::Binary => encode_request_binary(req),
        WireFormat::Json => serde_json::to_vec(req).expect("requests always serialize"),
    }
}

pub fn decode_request(b: &[u8], f: WireFormat) -> Result<ControlRequest, WireError> {
    match f {
        WireFormat::Binary => decode_request_binary(b),
        WireFormat::Json => serde_json::from_slice(b).map_err(|e| malformed(e.to_string())),
    }
}

pub fn encode_reply(rep: &ControlReply, f: WireFormat) -> Vec<u8> {
    match f {
        WireFormat::Binary => encode_reply_binary(rep),
        WireFormat::Json => serde_json::to_vec(rep).expect("replies always serialize"),
    }
}

pub fn decode_reply(b: &[u8], f: WireFormat) -> Result<ControlReply, WireError> {
    match f {
        WireFormat::Binary => decode_reply_binary(b),
        WireFormat::Json => serde_json::from_slice(b).map_err(|e| malformed(e.to_string())),
    }
}
