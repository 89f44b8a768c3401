//! Control requests, replies and error codes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::net::Ipv6Addr;

use crate::session::{
    ConfigError, MeasurementRecord, ReflectorSessionConfig, SessionConfig, SessionError,
    SessionStatus,
};

/// Records returned by one `GetStampSessionResults` reply at most.
pub const RESULTS_PER_REPLY: u32 = 1_000;

/// Node-wide settings supplied by `Init`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGlobalConfig {
    /// UDP port the STAMP filter is installed on.
    #[serde(default = "default_stamp_port")]
    pub stamp_udp_port: u16,
    /// Capture interface for raw transports; `None` means any.
    #[serde(default)]
    pub bind_interface: Option<String>,
    /// Local address; `::` accepts test packets for any local address.
    pub src_ipv6: Ipv6Addr,
}

fn default_stamp_port() -> u16 {
    crate::codec::STAMP_PORT
}

impl NodeGlobalConfig {
    pub fn new(src_ipv6: Ipv6Addr) -> Self {
        NodeGlobalConfig {
            stamp_udp_port: crate::codec::STAMP_PORT,
            bind_interface: None,
            src_ipv6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Sender,
    Reflector,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Sender => "sender",
            NodeRole::Reflector => "reflector",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum SessionSpec {
    Sender(SessionConfig),
    Reflector(ReflectorSessionConfig),
}

impl SessionSpec {
    pub fn role(&self) -> NodeRole {
        match self {
            SessionSpec::Sender(_) => NodeRole::Sender,
            SessionSpec::Reflector(_) => NodeRole::Reflector,
        }
    }

    pub fn ssid(&self) -> u16 {
        match self {
            SessionSpec::Sender(c) => c.ssid.get(),
            SessionSpec::Reflector(c) => c.ssid.get(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum ControlRequest {
    Init(NodeGlobalConfig),
    Reset,
    CreateStampSession(SessionSpec),
    StartStampSession {
        ssid: u16,
        /// Auto-stop after this many nanoseconds.
        #[serde(default)]
        duration_ns: Option<u64>,
    },
    StopStampSession {
        ssid: u16,
    },
    DestroyStampSession {
        ssid: u16,
    },
    GetStampSessionResults {
        ssid: u16,
        #[serde(default = "default_max")]
        max: u32,
    },
    GetStampSessionStatus {
        ssid: u16,
    },
    /// Test packets turned into output by this node since `Init`.
    GetProcessedCount,
}

fn default_max() -> u32 {
    RESULTS_PER_REPLY
}

impl ControlRequest {
    pub fn name(&self) -> &'static str {
        match self {
            ControlRequest::Init(_) => "Init",
            ControlRequest::Reset => "Reset",
            ControlRequest::CreateStampSession(_) => "CreateStampSession",
            ControlRequest::StartStampSession { .. } => "StartStampSession",
            ControlRequest::StopStampSession { .. } => "StopStampSession",
            ControlRequest::DestroyStampSession { .. } => "DestroyStampSession",
            ControlRequest::GetStampSessionResults { .. } => "GetStampSessionResults",
            ControlRequest::GetStampSessionStatus { .. } => "GetStampSessionStatus",
            ControlRequest::GetProcessedCount => "GetProcessedCount",
        }
    }
}

/// Error classes carried in error replies. Wire values are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    NotInitialized = 1,
    AlreadyInitialized = 2,
    DuplicateSsid = 3,
    UnknownSsid = 4,
    InvalidConfig = 5,
    IllegalTransition = 6,
    Unsupported = 7,
    UnsupportedParameter = 8,
    Transport = 9,
    Malformed = 10,
    Internal = 11,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 11] = [
        ErrorCode::NotInitialized,
        ErrorCode::AlreadyInitialized,
        ErrorCode::DuplicateSsid,
        ErrorCode::UnknownSsid,
        ErrorCode::InvalidConfig,
        ErrorCode::IllegalTransition,
        ErrorCode::Unsupported,
        ErrorCode::UnsupportedParameter,
        ErrorCode::Transport,
        ErrorCode::Malformed,
        ErrorCode::Internal,
    ];

    pub fn to_wire(self) -> u16 {
        self as u16
    }

    pub fn from_wire(v: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.to_wire() == v)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<&SessionError> for ErrorCode {
    fn from(e: &SessionError) -> Self {
        match e {
            SessionError::DuplicateSsid(_) => ErrorCode::DuplicateSsid,
            SessionError::UnknownSsid(_) => ErrorCode::UnknownSsid,
            SessionError::InvalidConfig(ConfigError::Invalid { .. }) => ErrorCode::InvalidConfig,
            SessionError::InvalidConfig(_) => ErrorCode::UnsupportedParameter,
            SessionError::IllegalTransition { .. } | SessionError::NotRunning => {
                ErrorCode::IllegalTransition
            }
            SessionError::Codec(_) => ErrorCode::InvalidConfig,
            SessionError::Time(_) => ErrorCode::Internal,
            SessionError::Transport(_) => ErrorCode::Transport,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub ssid: u16,
    pub role: NodeRole,
    pub status: SessionStatus,
    /// Probes sent (sender) or reflected (reflector).
    pub packets: u64,
    /// Records waiting to be fetched; always 0 on a reflector.
    pub queued: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplyBody {
    Empty,
    Results {
        records: Vec<MeasurementRecord>,
        /// More records were queued than this reply carries.
        more: bool,
    },
    Status(SessionInfo),
    ProcessedCount {
        processed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ControlReply {
    Ok(ReplyBody),
    Error { code: ErrorCode, message: String },
}

impl ControlReply {
    pub fn ok() -> Self {
        ControlReply::Ok(ReplyBody::Empty)
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ControlReply::Error {
            code,
            message: message.into(),
        }
    }

    pub fn into_result(self) -> Result<ReplyBody, ControlError> {
        match self {
            ControlReply::Ok(b) => Ok(b),
            ControlReply::Error { code, message } => Err(ControlError::Remote { code, message }),
        }
    }
}

impl From<SessionError> for ControlReply {
    fn from(e: SessionError) -> Self {
        ControlReply::error(ErrorCode::from(&e), e.to_string())
    }
}

/// Failure of a control operation as seen by the client.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControlError {
    #[error("{code}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ControlError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ControlError::Remote { code, .. } => Some(*code),
            _ => None,
        }
    }
}
