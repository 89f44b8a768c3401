//! IPv6 Segment Routing Header (routing type 4).
//!
//! ```text
//! | Next Header | Hdr Ext Len | Routing Type=4 | Segments Left |
//! | Last Entry  |    Flags    |            Tag                 |
//! | Segment List[0] (128 bits) ... Segment List[n-1]           |
//! ```
//!
//! `Segment List[0]` is the last segment of the path, so the list is stored
//! reversed on the wire. [`SegmentRoutingHeader::segments`] is kept in path
//! order (first hop first).

use serde::{Deserialize, Serialize};
use std::net::Ipv6Addr;

use super::CodecError;

pub const ROUTING_TYPE_SRH: u8 = 4;
pub const SRH_FIXED_LEN: usize = 8;
/// Upper bound on segments accepted by the encoder and decoder.
pub const MAX_SEGMENTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentRoutingHeader {
    pub next_header: u8,
    pub segments_left: u8,
    pub flags: u8,
    pub tag: u16,
    /// Path order: `segments[0]` is visited first.
    pub segments: Vec<Ipv6Addr>,
}

impl SegmentRoutingHeader {
    /// A fresh SRH for `segments`, carrying UDP, with every segment still
    /// to be visited.
    pub fn for_path(segments: Vec<Ipv6Addr>) -> Self {
        let segments_left = segments.len().saturating_sub(1) as u8;
        SegmentRoutingHeader {
            next_header: super::IPPROTO_UDP,
            segments_left,
            flags: 0,
            tag: 0,
            segments,
        }
    }

    pub fn last_entry(&self) -> u8 {
        self.segments.len().saturating_sub(1) as u8
    }

    /// Length in 8-octet units, not counting the first 8 octets.
    pub fn hdr_ext_len(&self) -> u8 {
        (self.segments.len() * 2) as u8
    }

    pub fn wire_len(&self) -> usize {
        SRH_FIXED_LEN + 16 * self.segments.len()
    }

    /// The segment the packet is currently steered to.
    pub fn active_segment(&self) -> Option<Ipv6Addr> {
        let n = self.segments.len();
        let sl = self.segments_left as usize;
        (sl < n).then(|| self.segments[n - 1 - sl])
    }

    /// Last segment of the path (`Segment List[0]` on the wire).
    pub fn final_segment(&self) -> Option<Ipv6Addr> {
        self.segments.last().copied()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.segments.is_empty() {
            return Err(CodecError::EmptySegmentList);
        }
        if self.segments.len() > MAX_SEGMENTS {
            return Err(CodecError::TooManySegments(self.segments.len()));
        }
        if self.segments_left > self.last_entry() {
            return Err(CodecError::SegmentsLeftOutOfRange {
                segments_left: self.segments_left,
                last_entry: self.last_entry(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        self.validate()?;
        out.extend_from_slice(&[
            self.next_header,
            self.hdr_ext_len(),
            ROUTING_TYPE_SRH,
            self.segments_left,
            self.last_entry(),
            self.flags,
        ]);
        out.extend_from_slice(&self.tag.to_be_bytes());
        for seg in self.segments.iter().rev() {
            out.extend_from_slice(&seg.octets());
        }
        Ok(())
    }

    /// Decodes an SRH at the start of `b`, returning it with the number of
    /// bytes consumed. TLVs are not supported and report `LenMismatch`.
    pub fn decode(b: &[u8]) -> Result<(Self, usize), CodecError> {
        if b.len() < SRH_FIXED_LEN {
            return Err(CodecError::TooShort {
                need: SRH_FIXED_LEN,
                got: b.len(),
            });
        }
        if b[2] != ROUTING_TYPE_SRH {
            return Err(CodecError::UnsupportedRoutingType(b[2]));
        }
        let hdr_ext_len = b[1] as usize;
        let total = SRH_FIXED_LEN + hdr_ext_len * 8;
        let last_entry = b[4] as usize;
        let n = last_entry + 1;
        if hdr_ext_len != 2 * n {
            return Err(CodecError::LenMismatch {
                what: "srh hdr_ext_len vs last_entry",
                expected: 2 * n,
                found: hdr_ext_len,
            });
        }
        if n > MAX_SEGMENTS {
            return Err(CodecError::TooManySegments(n));
        }
        if b.len() < total {
            return Err(CodecError::TooShort {
                need: total,
                got: b.len(),
            });
        }
        let segments_left = b[3];
        if segments_left as usize > last_entry {
            return Err(CodecError::SegmentsLeftOutOfRange {
                segments_left,
                last_entry: last_entry as u8,
            });
        }
        let mut segments: Vec<Ipv6Addr> = b[SRH_FIXED_LEN..total]
            .chunks_exact(16)
            .map(|c| {
                let mut o = [0u8; 16];
                o.copy_from_slice(c);
                Ipv6Addr::from(o)
            })
            .collect();
        segments.reverse();
        Ok((
            SegmentRoutingHeader {
                next_header: b[0],
                segments_left,
                flags: b[5],
                tag: u16::from_be_bytes([b[6], b[7]]),
                segments,
            },
            total,
        ))
    }
}
