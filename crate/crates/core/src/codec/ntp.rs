use serde::{Deserialize, Serialize};
use std::fmt;

use super::CodecError;

/// 64-bit NTP timestamp: seconds since 1900-01-01 and a 2^-32 s fraction.
///
/// The same 64 bits carry a PTPv2 truncated timestamp when the Z bit of the
/// accompanying [`ErrorEstimate`] is set; the codec does not interpret them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct NtpTimestamp {
    pub seconds: u32,
    pub fraction: u32,
}

impl NtpTimestamp {
    pub const WIRE_LEN: usize = 8;

    pub const fn new(seconds: u32, fraction: u32) -> Self {
        NtpTimestamp { seconds, fraction }
    }

    pub const fn to_bits(self) -> u64 {
        ((self.seconds as u64) << 32) | self.fraction as u64
    }

    pub const fn from_bits(bits: u64) -> Self {
        NtpTimestamp {
            seconds: (bits >> 32) as u32,
            fraction: bits as u32,
        }
    }

    pub fn to_bytes(self) -> [u8; 8] {
        self.to_bits().to_be_bytes()
    }

    /// Reads the first 8 bytes of `b`. Panics if `b` is shorter; callers
    /// check lengths once per packet.
    pub fn from_slice(b: &[u8]) -> Self {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&b[..8]);
        Self::from_bits(u64::from_be_bytes(raw))
    }
}

impl fmt::Display for NtpTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:08x}", self.seconds, self.fraction)
    }
}

/// STAMP Error Estimate: `S | Z | Scale(6) | Multiplier(8)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Clock synchronized to UTC by an external source.
    pub synchronized: bool,
    /// Timestamp format: false = NTP, true = PTPv2.
    pub ptp_format: bool,
    pub scale: u8,
    pub multiplier: u8,
}

impl Default for ErrorEstimate {
    fn default() -> Self {
        ErrorEstimate {
            synchronized: false,
            ptp_format: false,
            scale: 0,
            multiplier: 1,
        }
    }
}

impl ErrorEstimate {
    pub const MAX_SCALE: u8 = 0x3f;

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.scale > Self::MAX_SCALE {
            return Err(CodecError::BadErrorEstimate("scale exceeds 6 bits"));
        }
        if self.multiplier == 0 {
            return Err(CodecError::BadErrorEstimate("multiplier must be nonzero"));
        }
        Ok(())
    }

    /// Packs without validation; scale is masked to 6 bits.
    pub fn to_bits(self) -> u16 {
        (u16::from(self.synchronized) << 15)
            | (u16::from(self.ptp_format) << 14)
            | (u16::from(self.scale & Self::MAX_SCALE) << 8)
            | u16::from(self.multiplier)
    }

    pub fn from_bits(bits: u16) -> Self {
        ErrorEstimate {
            synchronized: bits & 0x8000 != 0,
            ptp_format: bits & 0x4000 != 0,
            scale: ((bits >> 8) & 0x3f) as u8,
            multiplier: bits as u8,
        }
    }

    /// Error bound in seconds: `multiplier * 2^(scale - 32)`.
    pub fn error_seconds(&self) -> f64 {
        f64::from(self.multiplier) * 2f64.powi(i32::from(self.scale) - 32)
    }
}
