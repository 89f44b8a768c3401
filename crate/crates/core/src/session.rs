//! Types shared by the Session-Sender, the Session-Reflector and the
//! control plane.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::net::Ipv6Addr;
use std::num::NonZeroU16;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::codec::{CodecError, NtpTimestamp, MAX_SEGMENTS, STAMP_PORT};
use crate::timebase::TimeError;

/// STAMP Session Identifier; never zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Ssid(NonZeroU16);

impl Ssid {
    pub const fn new(v: u16) -> Option<Self> {
        match NonZeroU16::new(v) {
            Some(n) => Some(Ssid(n)),
            None => None,
        }
    }

    pub const fn get(self) -> u16 {
        self.0.get()
    }
}

impl TryFrom<u16> for Ssid {
    type Error = &'static str;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        Ssid::new(v).ok_or("ssid must be nonzero")
    }
}

impl From<Ssid> for u16 {
    fn from(s: Ssid) -> u16 {
        s.get()
    }
}

impl fmt::Display for Ssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    #[default]
    Unauthenticated,
    Authenticated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    #[default]
    Ntp,
    Ptpv2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    OneWay,
    #[default]
    TwoWay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectorMode {
    #[default]
    Stateless,
    Stateful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Created,
    Running,
    Stopped,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Created => "created",
            SessionStatus::Running => "running",
            SessionStatus::Stopped => "stopped",
        })
    }
}

/// Durations travel as integer nanoseconds.
pub mod duration_ns {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_nanos)
    }
}

/// Session-Sender parameters: the ten per-session settings a controller
/// supplies on creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub ssid: Ssid,
    /// Direct path, first segment first. Empty means plain IPv6 routing.
    pub sid_list: Vec<Ipv6Addr>,
    #[serde(with = "duration_ns")]
    pub interval: Duration,
    pub src_addr: Ipv6Addr,
    #[serde(default)]
    pub auth_mode: AuthMode,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
    #[serde(default)]
    pub delay_mode: DelayMode,
    pub reflector_addr: Ipv6Addr,
    #[serde(default = "default_port")]
    pub sender_port: u16,
    #[serde(default = "default_port")]
    pub reflector_port: u16,
    #[serde(default)]
    pub reflector_mode: ReflectorMode,
}

fn default_port() -> u16 {
    STAMP_PORT
}

/// Session-Reflector parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectorSessionConfig {
    pub ssid: Ssid,
    /// Return path, first segment first. Empty means plain IPv6 routing.
    pub return_sid_list: Vec<Ipv6Addr>,
    /// Source address of reflected packets.
    pub reflector_addr: Ipv6Addr,
    /// Where reflected packets go; the test packet's source when absent.
    #[serde(default)]
    pub sender_addr: Option<Ipv6Addr>,
    #[serde(default = "default_port")]
    pub reflector_port: u16,
    #[serde(default)]
    pub mode: ReflectorMode,
    #[serde(default)]
    pub auth_mode: AuthMode,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid {
        field: &'static str,
        reason: &'static str,
    },
    #[error("authentication mode {0:?} is not supported")]
    UnsupportedAuthMode(AuthMode),
    #[error("timestamp format {0:?} is not supported for clock conversion")]
    UnsupportedTimestampFormat(TimestampFormat),
}

fn invalid(field: &'static str, reason: &'static str) -> ConfigError {
    ConfigError::Invalid { field, reason }
}

fn check_common(
    auth: AuthMode,
    fmt: TimestampFormat,
    sids: &[Ipv6Addr],
    sid_field: &'static str,
) -> Result<(), ConfigError> {
    if auth != AuthMode::Unauthenticated {
        return Err(ConfigError::UnsupportedAuthMode(auth));
    }
    if fmt != TimestampFormat::Ntp {
        return Err(ConfigError::UnsupportedTimestampFormat(fmt));
    }
    if sids.len() > MAX_SEGMENTS {
        return Err(invalid(sid_field, "more than 16 segments"));
    }
    if sids.iter().any(|s| s.is_unspecified() || s.is_multicast()) {
        return Err(invalid(sid_field, "segment is unspecified or multicast"));
    }
    Ok(())
}

impl SessionConfig {
    /// A sender config with protocol defaults for everything except the
    /// identifiers and addresses.
    pub fn new(ssid: Ssid, src_addr: Ipv6Addr, reflector_addr: Ipv6Addr, interval: Duration) -> Self {
        SessionConfig {
            ssid,
            sid_list: Vec::new(),
            interval,
            src_addr,
            auth_mode: AuthMode::default(),
            timestamp_format: TimestampFormat::default(),
            delay_mode: DelayMode::default(),
            reflector_addr,
            sender_port: STAMP_PORT,
            reflector_port: STAMP_PORT,
            reflector_mode: ReflectorMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_common(self.auth_mode, self.timestamp_format, &self.sid_list, "sid_list")?;
        if self.interval.is_zero() {
            return Err(invalid("interval", "must be greater than zero"));
        }
        if self.src_addr.is_unspecified() || self.src_addr.is_multicast() {
            return Err(invalid("src_addr", "must be a unicast address"));
        }
        if self.reflector_addr.is_unspecified() || self.reflector_addr.is_multicast() {
            return Err(invalid("reflector_addr", "must be a unicast address"));
        }
        if self.sender_port == 0 {
            return Err(invalid("sender_port", "must be nonzero"));
        }
        if self.reflector_port == 0 {
            return Err(invalid("reflector_port", "must be nonzero"));
        }
        Ok(())
    }

    /// Where probes are handed to: the first segment, or the reflector
    /// without a segment list.
    pub fn first_hop(&self) -> Ipv6Addr {
        self.sid_list.first().copied().unwrap_or(self.reflector_addr)
    }

    /// The reflector half of this session, returning along `return_sids`.
    pub fn reflector_side(&self, return_sids: Vec<Ipv6Addr>) -> ReflectorSessionConfig {
        ReflectorSessionConfig {
            ssid: self.ssid,
            return_sid_list: return_sids,
            reflector_addr: self.reflector_addr,
            sender_addr: Some(self.src_addr),
            reflector_port: self.reflector_port,
            mode: self.reflector_mode,
            auth_mode: self.auth_mode,
            timestamp_format: self.timestamp_format,
        }
    }
}

impl ReflectorSessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_common(
            self.auth_mode,
            self.timestamp_format,
            &self.return_sid_list,
            "return_sid_list",
        )?;
        if self.reflector_addr.is_unspecified() || self.reflector_addr.is_multicast() {
            return Err(invalid("reflector_addr", "must be a unicast address"));
        }
        if let Some(a) = self.sender_addr {
            if a.is_unspecified() || a.is_multicast() {
                return Err(invalid("sender_addr", "must be a unicast address"));
            }
        }
        if self.reflector_port == 0 {
            return Err(invalid("reflector_port", "must be nonzero"));
        }
        Ok(())
    }
}

/// One reflected probe as seen by the collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub ssid: u16,
    pub sender_seq: u32,
    pub reflector_seq: u32,
    pub t1: NtpTimestamp,
    pub t2: NtpTimestamp,
    pub t3: NtpTimestamp,
    pub t4: NtpTimestamp,
    pub sender_ttl: u8,
    /// Local reception instant, Unix nanoseconds.
    pub received_at: i64,
}

/// Why a received datagram produced no output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discard {
    NotStamp,
    WrongSsid,
    SessionNotRunning,
    DecodeError,
}

impl Discard {
    pub const ALL: [Discard; 4] = [
        Discard::NotStamp,
        Discard::WrongSsid,
        Discard::SessionNotRunning,
        Discard::DecodeError,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Discard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discard::NotStamp => "not_stamp",
            Discard::WrongSsid => "wrong_ssid",
            Discard::SessionNotRunning => "session_not_running",
            Discard::DecodeError => "decode_error",
        })
    }
}

/// Per-reason discard counters.
#[derive(Debug, Default)]
pub struct DiscardCounters([AtomicU64; 4]);

impl DiscardCounters {
    pub fn record(&self, reason: Discard) -> Discard {
        self.0[reason.index()].fetch_add(1, Ordering::Relaxed);
        reason
    }

    pub fn get(&self, reason: Discard) -> u64 {
        self.0[reason.index()].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Discard::ALL.iter().map(|&r| self.get(r)).sum()
    }

    pub fn snapshot(&self) -> Vec<(Discard, u64)> {
        Discard::ALL.iter().map(|&r| (r, self.get(r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("session {0} already exists")]
    DuplicateSsid(Ssid),
    #[error("unknown session {0}")]
    UnknownSsid(u16),
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("cannot {op} a session that is {from}")]
    IllegalTransition { from: SessionStatus, op: &'static str },
    #[error("session is not running")]
    NotRunning,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("transport: {0}")]
    Transport(String),
}
