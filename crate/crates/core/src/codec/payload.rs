//! Unauthenticated STAMP test-packet bodies (RFC 8762 / RFC 8972 layout).
//!
//! Sender packet:
//!
//! ```text
//!  0               4                               12      14      16
//! +---------------+-------------------------------+-------+-------+
//! | Sequence Num  | Timestamp (T1)                |  EE   | SSID  |
//! +---------------+-------------------------------+-------+-------+
//! | MBZ (28 octets)                                               |
//! +---------------------------------------------------------------+
//! ```
//!
//! Reflector packet:
//!
//! ```text
//!  0        4             12   14   16            24       28            36   38   40  41   44
//! | Seq    | Timestamp T3 | EE |SSID| Receive T2  |Snd Seq | Snd T1      |SEE |MBZ |TTL|MBZ |
//! ```

use serde::{Deserialize, Serialize};

use super::{CodecError, ErrorEstimate, NtpTimestamp};

/// Both test-packet bodies are exactly this long.
pub const PAYLOAD_LEN: usize = 44;

/// Byte offsets of the sender test-packet fields.
pub mod sender_offsets {
    pub const SEQUENCE: usize = 0;
    pub const TIMESTAMP: usize = 4;
    pub const ERROR_ESTIMATE: usize = 12;
    pub const SSID: usize = 14;
    pub const MBZ: usize = 16;
}

/// Byte offsets of the reflector test-packet fields.
pub mod reflector_offsets {
    pub const SEQUENCE: usize = 0;
    pub const TIMESTAMP: usize = 4;
    pub const ERROR_ESTIMATE: usize = 12;
    pub const SSID: usize = 14;
    pub const RECEIVE_TIMESTAMP: usize = 16;
    pub const SENDER_SEQUENCE: usize = 24;
    pub const SENDER_TIMESTAMP: usize = 28;
    pub const SENDER_ERROR_ESTIMATE: usize = 36;
    pub const MBZ1: usize = 38;
    pub const SENDER_TTL: usize = 40;
    pub const MBZ2: usize = 41;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SenderTestPayload {
    pub sequence_number: u32,
    /// T1.
    pub timestamp: NtpTimestamp,
    pub error_estimate: ErrorEstimate,
    pub ssid: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReflectorTestPayload {
    pub sequence_number: u32,
    /// T3.
    pub timestamp: NtpTimestamp,
    pub error_estimate: ErrorEstimate,
    /// T2.
    pub receive_timestamp: NtpTimestamp,
    pub ssid: u16,
    pub sender_sequence_number: u32,
    /// Echo of T1.
    pub sender_timestamp: NtpTimestamp,
    pub sender_error_estimate: ErrorEstimate,
    pub sender_ttl: u8,
}

/// A decoded payload together with the non-fatal MBZ diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded<P> {
    pub payload: P,
    /// Some must-be-zero byte was set on the wire.
    pub mbz_nonzero: bool,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn check_len(b: &[u8]) -> Result<(), CodecError> {
    if b.len() < PAYLOAD_LEN {
        return Err(CodecError::TooShort {
            need: PAYLOAD_LEN,
            got: b.len(),
        });
    }
    Ok(())
}

impl SenderTestPayload {
    pub fn encode(&self) -> Result<[u8; PAYLOAD_LEN], CodecError> {
        let mut out = [0u8; PAYLOAD_LEN];
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Writes the 44-byte body into `out[..44]`, zeroing the MBZ region.
    pub fn encode_into(&self, out: &mut [u8]) -> Result<(), CodecError> {
        use sender_offsets::*;
        if self.ssid == 0 {
            return Err(CodecError::SsidZero);
        }
        self.error_estimate.validate()?;
        check_len(out)?;
        out[SEQUENCE..SEQUENCE + 4].copy_from_slice(&self.sequence_number.to_be_bytes());
        out[TIMESTAMP..TIMESTAMP + 8].copy_from_slice(&self.timestamp.to_bytes());
        out[ERROR_ESTIMATE..ERROR_ESTIMATE + 2]
            .copy_from_slice(&self.error_estimate.to_bits().to_be_bytes());
        out[SSID..SSID + 2].copy_from_slice(&self.ssid.to_be_bytes());
        out[MBZ..PAYLOAD_LEN].fill(0);
        Ok(())
    }

    pub fn decode(b: &[u8]) -> Result<Decoded<Self>, CodecError> {
        use sender_offsets::*;
        check_len(b)?;
        let ssid = read_u16(b, SSID);
        if ssid == 0 {
            return Err(CodecError::SsidZero);
        }
        let payload = SenderTestPayload {
            sequence_number: read_u32(b, SEQUENCE),
            timestamp: NtpTimestamp::from_slice(&b[TIMESTAMP..]),
            error_estimate: ErrorEstimate::from_bits(read_u16(b, ERROR_ESTIMATE)),
            ssid,
        };
        Ok(Decoded {
            payload,
            mbz_nonzero: b[MBZ..PAYLOAD_LEN].iter().any(|&x| x != 0),
        })
    }
}

impl ReflectorTestPayload {
    /// Reflector body answering `sender`: echo fields copied verbatim,
    /// reflector-side fields left for the caller to fill.
    pub fn answering(sender: &SenderTestPayload, sender_ttl: u8) -> Self {
        ReflectorTestPayload {
            sequence_number: sender.sequence_number,
            timestamp: NtpTimestamp::default(),
            error_estimate: ErrorEstimate::default(),
            receive_timestamp: NtpTimestamp::default(),
            ssid: sender.ssid,
            sender_sequence_number: sender.sequence_number,
            sender_timestamp: sender.timestamp,
            sender_error_estimate: sender.error_estimate,
            sender_ttl,
        }
    }

    pub fn encode(&self) -> Result<[u8; PAYLOAD_LEN], CodecError> {
        let mut out = [0u8; PAYLOAD_LEN];
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// The echoed sender Error Estimate is written bit-for-bit and is not
    /// validated: it belongs to the peer.
    pub fn encode_into(&self, out: &mut [u8]) -> Result<(), CodecError> {
        use reflector_offsets::*;
        if self.ssid == 0 {
            return Err(CodecError::SsidZero);
        }
        self.error_estimate.validate()?;
        check_len(out)?;
        out[SEQUENCE..SEQUENCE + 4].copy_from_slice(&self.sequence_number.to_be_bytes());
        out[TIMESTAMP..TIMESTAMP + 8].copy_from_slice(&self.timestamp.to_bytes());
        out[ERROR_ESTIMATE..ERROR_ESTIMATE + 2]
            .copy_from_slice(&self.error_estimate.to_bits().to_be_bytes());
        out[SSID..SSID + 2].copy_from_slice(&self.ssid.to_be_bytes());
        out[RECEIVE_TIMESTAMP..RECEIVE_TIMESTAMP + 8]
            .copy_from_slice(&self.receive_timestamp.to_bytes());
        out[SENDER_SEQUENCE..SENDER_SEQUENCE + 4]
            .copy_from_slice(&self.sender_sequence_number.to_be_bytes());
        out[SENDER_TIMESTAMP..SENDER_TIMESTAMP + 8]
            .copy_from_slice(&self.sender_timestamp.to_bytes());
        out[SENDER_ERROR_ESTIMATE..SENDER_ERROR_ESTIMATE + 2]
            .copy_from_slice(&self.sender_error_estimate.to_bits().to_be_bytes());
        out[MBZ1..SENDER_TTL].fill(0);
        out[SENDER_TTL] = self.sender_ttl;
        out[MBZ2..PAYLOAD_LEN].fill(0);
        Ok(())
    }

    pub fn decode(b: &[u8]) -> Result<Decoded<Self>, CodecError> {
        use reflector_offsets::*;
        check_len(b)?;
        let ssid = read_u16(b, SSID);
        if ssid == 0 {
            return Err(CodecError::SsidZero);
        }
        let payload = ReflectorTestPayload {
            sequence_number: read_u32(b, SEQUENCE),
            timestamp: NtpTimestamp::from_slice(&b[TIMESTAMP..]),
            error_estimate: ErrorEstimate::from_bits(read_u16(b, ERROR_ESTIMATE)),
            receive_timestamp: NtpTimestamp::from_slice(&b[RECEIVE_TIMESTAMP..]),
            ssid,
            sender_sequence_number: read_u32(b, SENDER_SEQUENCE),
            sender_timestamp: NtpTimestamp::from_slice(&b[SENDER_TIMESTAMP..]),
            sender_error_estimate: ErrorEstimate::from_bits(read_u16(b, SENDER_ERROR_ESTIMATE)),
            sender_ttl: b[SENDER_TTL],
        };
        let mbz_nonzero = b[MBZ1..SENDER_TTL]
            .iter()
            .chain(&b[MBZ2..PAYLOAD_LEN])
            .any(|&x| x != 0);
        Ok(Decoded {
            payload,
            mbz_nonzero,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> SenderTestPayload {
        SenderTestPayload {
            sequence_number: 0,
            timestamp: NtpTimestamp::new(0, 0),
            error_estimate: ErrorEstimate::default(),
            ssid: 1,
        }
    }

    fn golden_sender() -> [u8; 44] {
        let mut v = [0u8; 44];
        v[13] = 0x01; // EE multiplier = 1
        v[15] = 0x01; // SSID = 1
        v
    }

    #[test]
    fn sender_baseline_vector() {
        assert_eq!(baseline().encode().unwrap(), golden_sender());
        let d = SenderTestPayload::decode(&golden_sender()).unwrap();
        assert_eq!(d.payload, baseline());
        assert!(!d.mbz_nonzero);
    }

    #[test]
    fn sender_rejects_zero_ssid() {
        let p = SenderTestPayload {
            sequence_number: 7,
            ssid: 0,
            ..baseline()
        };
        assert_eq!(p.encode(), Err(CodecError::SsidZero));
        assert_eq!(
            SenderTestPayload::decode(&[0u8; 44]),
            Err(CodecError::SsidZero)
        );
    }

    #[test]
    fn sender_rejects_zero_multiplier() {
        let p = SenderTestPayload {
            error_estimate: ErrorEstimate {
                multiplier: 0,
                ..Default::default()
            },
            ..baseline()
        };
        assert!(matches!(p.encode(), Err(CodecError::BadErrorEstimate(_))));
    }

    #[test]
    fn too_short() {
        let v = golden_sender();
        assert_eq!(
            SenderTestPayload::decode(&v[..43]),
            Err(CodecError::TooShort { need: 44, got: 43 })
        );
        assert!(matches!(
            ReflectorTestPayload::decode(&v[..20]),
            Err(CodecError::TooShort { .. })
        ));
    }

    #[test]
    fn sender_mbz_flagged_not_rejected() {
        for i in sender_offsets::MBZ..PAYLOAD_LEN {
            let mut v = golden_sender();
            v[i] = 0xff;
            let d = SenderTestPayload::decode(&v).unwrap();
            assert!(d.mbz_nonzero, "byte {i}");
            assert_eq!(d.payload, baseline());
        }
    }

    #[test]
    fn reflector_ttl_offset() {
        let p = ReflectorTestPayload {
            sender_ttl: 64,
            ..ReflectorTestPayload::answering(&baseline(), 64)
        };
        let b = p.encode().unwrap();
        assert_eq!(b.len(), 44);
        assert_eq!(b[40], 0x40);
        assert_eq!(b[reflector_offsets::SENDER_TTL], 0x40);
        // Only EE multipliers, SSID and TTL are nonzero.
        let nonzero: Vec<usize> = (0..44).filter(|&i| b[i] != 0).collect();
        assert_eq!(nonzero, vec![13, 15, 37, 40]);
        let d = ReflectorTestPayload::decode(&b).unwrap();
        assert_eq!(d.payload, p);
        assert!(!d.mbz_nonzero);
    }

    #[test]
    fn reflector_mbz_flagged() {
        let b = ReflectorTestPayload::answering(&baseline(), 1).encode().unwrap();
        for i in (38..40).chain(41..44) {
            let mut m = b;
            m[i] = 1;
            assert!(ReflectorTestPayload::decode(&m).unwrap().mbz_nonzero);
        }
    }

    #[test]
    fn echo_copies_sender_fields() {
        let s = SenderTestPayload {
            sequence_number: 0xdead_beef,
            timestamp: NtpTimestamp::new(10, 20),
            error_estimate: ErrorEstimate {
                synchronized: true,
                ptp_format: true,
                scale: 5,
                multiplier: 9,
            },
            ssid: 77,
        };
        let r = ReflectorTestPayload::answering(&s, 63);
        assert_eq!(r.sender_sequence_number, s.sequence_number);
        assert_eq!(r.sender_timestamp, s.timestamp);
        assert_eq!(r.sender_error_estimate, s.error_estimate);
        assert_eq!(r.ssid, s.ssid);
        assert_eq!(r.sender_ttl, 63);
    }
}
