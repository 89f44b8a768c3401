//! Wire codecs: STAMP test payloads, the Segment Routing Header and whole
//! IPv6/SRH/UDP test datagrams. Everything is big-endian.

pub mod checksum;
mod datagram;
mod ntp;
mod payload;
mod srh;

pub use datagram::{
    build_udp_datagram, DatagramView, Envelope, ParsedDatagram, PayloadKind, StampPayload,
    TestDatagram, UdpLayout, DEFAULT_HOP_LIMIT, IPV6_HEADER_LEN, STAMP_PORT, UDP_HEADER_LEN,
};
pub use ntp::{ErrorEstimate, NtpTimestamp};
pub use payload::{
    reflector_offsets, sender_offsets, Decoded, ReflectorTestPayload, SenderTestPayload,
    PAYLOAD_LEN,
};
pub use srh::{SegmentRoutingHeader, MAX_SEGMENTS, ROUTING_TYPE_SRH};

pub const IPPROTO_UDP: u8 = 17;
pub const IPPROTO_ROUTING: u8 = 43;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("buffer too short: need {need} bytes, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("SSID must be nonzero")]
    SsidZero,
    #[error("invalid error estimate: {0}")]
    BadErrorEstimate(&'static str),
    #[error("segment list is empty")]
    EmptySegmentList,
    #[error("segment list has {0} entries, limit is {MAX_SEGMENTS}")]
    TooManySegments(usize),
    #[error("segments_left {segments_left} exceeds last_entry {last_entry}")]
    SegmentsLeftOutOfRange { segments_left: u8, last_entry: u8 },
    #[error("{what}: expected {expected}, found {found}")]
    LenMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unsupported routing type {0}")]
    UnsupportedRoutingType(u8),
    #[error("not an IPv6 packet")]
    NotIpv6,
    #[error("unsupported next header {0}")]
    UnsupportedNextHeader(u8),
    #[error("field out of range: {0}")]
    FieldRange(&'static str),
    #[error("UDP checksum mismatch: expected {expected:#06x}, found {found:#06x}")]
    ChecksumMismatch {
        expected: u16,
        found: u16,
        datagram: Box<TestDatagram>,
    },
}
