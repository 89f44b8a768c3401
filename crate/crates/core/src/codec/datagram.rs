//! Full IPv6 (+SRH) / UDP / STAMP datagrams.

use serde::{Deserialize, Serialize};
use std::net::Ipv6Addr;
use std::ops::Range;

use super::checksum;
use super::payload::{Decoded, ReflectorTestPayload, SenderTestPayload, PAYLOAD_LEN};
use super::srh::SegmentRoutingHeader;
use super::{CodecError, IPPROTO_ROUTING, IPPROTO_UDP};

pub const IPV6_HEADER_LEN: usize = 40;
pub const UDP_HEADER_LEN: usize = 8;
/// Well-known STAMP port.
pub const STAMP_PORT: u16 = 862;
pub const DEFAULT_HOP_LIMIT: u8 = 64;

const IPPROTO_HOPOPTS: u8 = 0;
const IPPROTO_DSTOPTS: u8 = 60;

/// Everything in a test datagram except the STAMP body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub src_addr: Ipv6Addr,
    pub dst_addr: Ipv6Addr,
    pub traffic_class: u8,
    /// 20 bits.
    pub flow_label: u32,
    pub hop_limit: u8,
    pub srh: Option<SegmentRoutingHeader>,
    pub src_port: u16,
    pub dst_port: u16,
}

impl Envelope {
    /// Defaults: hop limit 64, both ports 862, no SRH.
    pub fn new(src_addr: Ipv6Addr, dst_addr: Ipv6Addr) -> Self {
        Envelope {
            src_addr,
            dst_addr,
            traffic_class: 0,
            flow_label: 0,
            hop_limit: DEFAULT_HOP_LIMIT,
            srh: None,
            src_port: STAMP_PORT,
            dst_port: STAMP_PORT,
        }
    }

    /// Address used in the checksum pseudo-header.
    pub fn final_destination(&self) -> Ipv6Addr {
        self.srh
            .as_ref()
            .and_then(SegmentRoutingHeader::final_segment)
            .unwrap_or(self.dst_addr)
    }

    pub fn header_len(&self) -> usize {
        IPV6_HEADER_LEN + self.srh.as_ref().map_or(0, |s| s.wire_len()) + UDP_HEADER_LEN
    }
}

/// Where the mutable parts of a built datagram live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpLayout {
    pub udp_offset: usize,
    pub payload_offset: usize,
    pub checksum_offset: usize,
}

/// Serializes `env` around an arbitrary UDP payload.
pub fn build_udp_datagram(env: &Envelope, payload: &[u8]) -> Result<(Vec<u8>, UdpLayout), CodecError> {
    if env.flow_label > 0x000f_ffff {
        return Err(CodecError::FieldRange("flow_label exceeds 20 bits"));
    }
    let srh_len = env.srh.as_ref().map_or(0, |s| s.wire_len());
    let upper_len = srh_len + UDP_HEADER_LEN + payload.len();
    let udp_len = UDP_HEADER_LEN + payload.len();
    if upper_len > usize::from(u16::MAX) {
        return Err(CodecError::FieldRange("datagram exceeds IPv6 payload length"));
    }
    let mut out = Vec::with_capacity(IPV6_HEADER_LEN + upper_len);
    let vtf: u32 = (6 << 28) | (u32::from(env.traffic_class) << 20) | env.flow_label;
    out.extend_from_slice(&vtf.to_be_bytes());
    out.extend_from_slice(&(upper_len as u16).to_be_bytes());
    out.push(if env.srh.is_some() { IPPROTO_ROUTING } else { IPPROTO_UDP });
    out.push(env.hop_limit);
    out.extend_from_slice(&env.src_addr.octets());
    out.extend_from_slice(&env.dst_addr.octets());
    if let Some(srh) = &env.srh {
        if srh.next_header != IPPROTO_UDP {
            return Err(CodecError::UnsupportedNextHeader(srh.next_header));
        }
        srh.encode_into(&mut out)?;
    }
    let udp_offset = out.len();
    out.extend_from_slice(&env.src_port.to_be_bytes());
    out.extend_from_slice(&env.dst_port.to_be_bytes());
    out.extend_from_slice(&(udp_len as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(payload);
    let csum = checksum::udp_checksum(&env.src_addr, &env.final_destination(), &out[udp_offset..]);
    out[udp_offset + 6..udp_offset + 8].copy_from_slice(&csum.to_be_bytes());
    Ok((
        out,
        UdpLayout {
            udp_offset,
            payload_offset: udp_offset + UDP_HEADER_LEN,
            checksum_offset: udp_offset + 6,
        },
    ))
}

/// Zero-copy view of an IPv6/UDP datagram.
#[derive(Debug, Clone)]
pub struct DatagramView<'a> {
    bytes: &'a [u8],
    pub traffic_class: u8,
    pub flow_label: u32,
    pub hop_limit: u8,
    pub src_addr: Ipv6Addr,
    pub dst_addr: Ipv6Addr,
    pub srh_range: Option<Range<usize>>,
    pub udp_offset: usize,
    pub src_port: u16,
    pub dst_port: u16,
    udp_end: usize,
}

fn addr_at(b: &[u8], at: usize) -> Ipv6Addr {
    let mut o = [0u8; 16];
    o.copy_from_slice(&b[at..at + 16]);
    Ipv6Addr::from(o)
}

impl<'a> DatagramView<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, CodecError> {
        if bytes.len() < IPV6_HEADER_LEN {
            return Err(CodecError::TooShort {
                need: IPV6_HEADER_LEN,
                got: bytes.len(),
            });
        }
        let vtf = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        if vtf >> 28 != 6 {
            return Err(CodecError::NotIpv6);
        }
        let plen = usize::from(u16::from_be_bytes([bytes[4], bytes[5]]));
        let end = IPV6_HEADER_LEN + plen;
        if bytes.len() < end {
            return Err(CodecError::TooShort {
                need: end,
                got: bytes.len(),
            });
        }
        let mut next = bytes[6];
        let mut off = IPV6_HEADER_LEN;
        let mut srh_range = None;
        loop {
            match next {
                IPPROTO_UDP => break,
                IPPROTO_ROUTING => {
                    if srh_range.is_some() {
                        return Err(CodecError::UnsupportedNextHeader(next));
                    }
                    let hdr = bytes.get(off..end).filter(|h| h.len() >= 8).ok_or(
                        CodecError::TooShort {
                            need: off + 8,
                            got: end,
                        },
                    )?;
                    if hdr[2] != super::srh::ROUTING_TYPE_SRH {
                        return Err(CodecError::UnsupportedRoutingType(hdr[2]));
                    }
                    let len = 8 + usize::from(hdr[1]) * 8;
                    if off + len > end {
                        return Err(CodecError::TooShort {
                            need: off + len,
                            got: end,
                        });
                    }
                    srh_range = Some(off..off + len);
                    next = hdr[0];
                    off += len;
                }
                IPPROTO_HOPOPTS | IPPROTO_DSTOPTS => {
                    let hdr = bytes.get(off..end).filter(|h| h.len() >= 8).ok_or(
                        CodecError::TooShort {
                            need: off + 8,
                            got: end,
                        },
                    )?;
                    next = hdr[0];
                    off += 8 + usize::from(hdr[1]) * 8;
                    if off > end {
                        return Err(CodecError::TooShort { need: off, got: end });
                    }
                }
                other => return Err(CodecError::UnsupportedNextHeader(other)),
            }
        }
        if end - off < UDP_HEADER_LEN {
            return Err(CodecError::TooShort {
                need: off + UDP_HEADER_LEN,
                got: end,
            });
        }
        let udp = &bytes[off..end];
        let udp_len = usize::from(u16::from_be_bytes([udp[4], udp[5]]));
        if udp_len != udp.len() {
            return Err(CodecError::LenMismatch {
                what: "udp length",
                expected: udp.len(),
                found: udp_len,
            });
        }
        Ok(DatagramView {
            bytes,
            traffic_class: (vtf >> 20) as u8,
            flow_label: vtf & 0x000f_ffff,
            hop_limit: bytes[7],
            src_addr: addr_at(bytes, 8),
            dst_addr: addr_at(bytes, 24),
            srh_range,
            udp_offset: off,
            src_port: u16::from_be_bytes([udp[0], udp[1]]),
            dst_port: u16::from_be_bytes([udp[2], udp[3]]),
            udp_end: end,
        })
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    pub fn udp_segment(&self) -> &'a [u8] {
        &self.bytes[self.udp_offset..self.udp_end]
    }

    pub fn payload(&self) -> &'a [u8] {
        &self.bytes[self.udp_offset + UDP_HEADER_LEN..self.udp_end]
    }

    pub fn payload_offset(&self) -> usize {
        self.udp_offset + UDP_HEADER_LEN
    }

    pub fn checksum(&self) -> u16 {
        let u = self.udp_segment();
        u16::from_be_bytes([u[6], u[7]])
    }

    /// Final destination: `Segment List[0]` when an SRH is present.
    pub fn final_destination(&self) -> Ipv6Addr {
        match &self.srh_range {
            Some(r) if r.len() >= 24 => addr_at(self.bytes, r.start + 8),
            _ => self.dst_addr,
        }
    }

    pub fn checksum_valid(&self) -> bool {
        checksum::udp_checksum_valid(&self.src_addr, &self.final_destination(), self.udp_segment())
    }

    pub fn srh(&self) -> Option<Result<SegmentRoutingHeader, CodecError>> {
        self.srh_range
            .clone()
            .map(|r| SegmentRoutingHeader::decode(&self.bytes[r]).map(|(s, _)| s))
    }

    pub fn envelope(&self) -> Result<Envelope, CodecError> {
        Ok(Envelope {
            src_addr: self.src_addr,
            dst_addr: self.dst_addr,
            traffic_class: self.traffic_class,
            flow_label: self.flow_label,
            hop_limit: self.hop_limit,
            srh: self.srh().transpose()?,
            src_port: self.src_port,
            dst_port: self.dst_port,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Sender,
    Reflector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StampPayload {
    Sender(SenderTestPayload),
    Reflector(ReflectorTestPayload),
}

impl StampPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            StampPayload::Sender(_) => PayloadKind::Sender,
            StampPayload::Reflector(_) => PayloadKind::Reflector,
        }
    }

    pub fn ssid(&self) -> u16 {
        match self {
            StampPayload::Sender(p) => p.ssid,
            StampPayload::Reflector(p) => p.ssid,
        }
    }

    pub fn encode(&self) -> Result<[u8; PAYLOAD_LEN], CodecError> {
        match self {
            StampPayload::Sender(p) => p.encode(),
            StampPayload::Reflector(p) => p.encode(),
        }
    }

    pub fn decode(kind: PayloadKind, b: &[u8]) -> Result<Decoded<Self>, CodecError> {
        Ok(match kind {
            PayloadKind::Sender => {
                let d = SenderTestPayload::decode(b)?;
                Decoded {
                    payload: StampPayload::Sender(d.payload),
                    mbz_nonzero: d.mbz_nonzero,
                }
            }
            PayloadKind::Reflector => {
                let d = ReflectorTestPayload::decode(b)?;
                Decoded {
                    payload: StampPayload::Reflector(d.payload),
                    mbz_nonzero: d.mbz_nonzero,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestDatagram {
    pub envelope: Envelope,
    pub payload: StampPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDatagram {
    pub datagram: TestDatagram,
    pub mbz_nonzero: bool,
}

impl TestDatagram {
    pub fn build(&self) -> Result<Vec<u8>, CodecError> {
        self.build_with_layout().map(|(b, _)| b)
    }

    pub fn build_with_layout(&self) -> Result<(Vec<u8>, UdpLayout), CodecError> {
        let body = self.payload.encode()?;
        build_udp_datagram(&self.envelope, &body)
    }

    /// Parses a datagram carrying a `kind` body. A bad checksum yields
    /// [`CodecError::ChecksumMismatch`] with the decoded datagram attached.
    pub fn parse(bytes: &[u8], kind: PayloadKind) -> Result<ParsedDatagram, CodecError> {
        let view = DatagramView::parse(bytes)?;
        let decoded = StampPayload::decode(kind, view.payload())?;
        let datagram = TestDatagram {
            envelope: view.envelope()?,
            payload: decoded.payload,
        };
        if !view.checksum_valid() {
            let found = view.checksum();
            let mut segment = view.udp_segment().to_vec();
            segment[6] = 0;
            segment[7] = 0;
            let expected =
                checksum::udp_checksum(&view.src_addr, &view.final_destination(), &segment);
            return Err(CodecError::ChecksumMismatch {
                expected,
                found,
                datagram: Box::new(datagram),
            });
        }
        Ok(ParsedDatagram {
            datagram,
            mbz_nonzero: decoded.mbz_nonzero,
        })
    }
}
