//! STAMP-based end-to-end delay monitoring for SRv6 paths.
//!
//! The crate is organised by role:
//!
//! * [`codec`]: bit-exact STAMP payloads, SRH and IPv6/UDP test datagrams.
//! * [`timebase`]: host and simulated clocks producing NTP timestamps.
//! * [`sender`] / [`reflector`]: the Session-Sender (also the collector of
//!   measurement records) and the Session-Reflector.
//! * [`control`]: the southbound session-management API, its wire schema,
//!   a TCP endpoint and the controller-side client.
//! * [`analytics`]: direct/return delays, running averages, CSV/JSON export.
//! * [`transport`]: the packet filter contract, a deterministic simulated
//!   network and host UDP / raw IPv6 backends.
//! * [`loadgen`]: mixed data/STAMP trials and the PDR search.
//!
//! Batch helpers run on rayon when the `parallel` feature is enabled (the
//! default) and sequentially otherwise; see [`exec`].

pub mod analytics;
pub mod codec;
pub mod control;
pub mod exec;
pub mod loadgen;
pub mod reflector;
pub mod scenario;
pub mod sender;
pub mod session;
pub mod timebase;
pub mod transport;

pub use codec::{CodecError, NtpTimestamp};
pub use session::{Discard, MeasurementRecord, SessionConfig, Ssid};
