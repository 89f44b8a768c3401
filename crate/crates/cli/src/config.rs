//! Daemon configuration files.

use std::net::{Ipv6Addr, SocketAddr};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use srv6_stamp::control::{default_control_addr, NodeGlobalConfig, SessionSpec};

use crate::exit::{CliError, CliResult, Exit};

/// Data-plane backend of a daemon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// Host UDP sockets; unprivileged, SRH not carried.
    #[default]
    Udp,
    /// Raw IPv6 sockets carrying the SRH; needs CAP_NET_RAW.
    Raw,
}

fn default_init() -> Option<NodeGlobalConfig> {
    Some(NodeGlobalConfig::new(Ipv6Addr::UNSPECIFIED))
}

/// One JSON file per daemon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaemonConfig {
    #[serde(default = "default_control_addr")]
    pub control_addr: SocketAddr,
    #[serde(default)]
    pub transport: TransportKind,
    /// Applied at startup. `null` leaves the node waiting for `Init`.
    #[serde(default = "default_init")]
    pub init: Option<NodeGlobalConfig>,
    /// Sessions created at startup, after `init`.
    #[serde(default)]
    pub sessions: Vec<SessionSpec>,
    /// Start the preloaded sessions too.
    #[serde(default)]
    pub start_sessions: bool,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        DaemonConfig {
            control_addr: default_control_addr(),
            transport: TransportKind::default(),
            init: default_init(),
            sessions: Vec::new(),
            start_sessions: false,
        }
    }
}

/// Parses JSON, naming the offending field and position on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CliError::new(Exit::InvalidInput, format!("{origin}: field `{path}`: {inner}"))
    })
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(Exit::ReadInput, format!("cannot read {}: {e}", path.display())))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(&read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_a_minimal_config() {
        let c: DaemonConfig = parse_json("{}", "t").unwrap();
        assert_eq!(c, DaemonConfig::default());
        assert_eq!(c.init.unwrap().stamp_udp_port, 862);
    }

    #[test]
    fn errors_name_field_and_position() {
        let e = parse_json::<DaemonConfig>("{\n  \"init\": {\"src_ipv6\": \"nope\"}\n}", "d.json").unwrap_err();
        assert_eq!(e.exit, Exit::InvalidInput);
        assert!(e.message.contains("init.src_ipv6"), "{}", e.message);
        assert!(e.message.contains("line 2"), "{}", e.message);
        let e = parse_json::<DaemonConfig>("{\"contol_addr\": 1}", "d.json").unwrap_err();
        assert!(e.message.contains("contol_addr"), "{}", e.message);
    }
}
