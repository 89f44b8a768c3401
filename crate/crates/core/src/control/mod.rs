//! Southbound session-management API.
//!
//! [`StampNode`] serves [`ControlRequest`]s for one sender or reflector.
//! [`ControlServer`] exposes a node over TCP using the framing in [`wire`];
//! [`ControlClient`] implementations reach a node in-process or over TCP;
//! [`Controller`] sequences both nodes of a measured path.

mod client;
mod controller;
mod message;
mod node;
mod server;
pub mod wire;

pub use client::{ControlClient, InProcessClient, TcpClient};
pub use controller::{Controller, PathSpec, RetryPolicy};
pub use message::{
    ControlError, ControlReply, ControlRequest, ErrorCode, NodeGlobalConfig, NodeRole, ReplyBody,
    SessionInfo, SessionSpec, RESULTS_PER_REPLY,
};
pub use node::{Engine, StampNode, TransportFactory};
pub use server::{
    control_addr_from_env, default_control_addr, ControlServer, DEFAULT_CONTROL_PORT,
    ENV_CONTROL_ADDR, ENV_CONTROL_PORT,
};
pub use wire::WireFormat;
