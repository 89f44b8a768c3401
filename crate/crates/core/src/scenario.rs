//! End-to-end measurement runs on the simulated network, described by a
//! JSON scenario: nodes with clock offsets, directed links, and one
//! measured path driven through the controller.

use std::collections::HashMap;
use std::net::Ipv6Addr;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analytics::{DelaySeries, Summary};
use crate::control::{
    ControlError, Controller, InProcessClient, NodeGlobalConfig, NodeRole, PathSpec, RetryPolicy,
    StampNode,
};
use crate::session::{DelayMode, MeasurementRecord, ReflectorMode, Ssid};
use crate::transport::sim::DEFAULT_START_UNIX_NS;
use crate::transport::{DelayModel, SimLink, SimNetwork};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("control failure: {0}")]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub addr: Ipv6Addr,
    /// How far this node's clock runs ahead of true time.
    #[serde(default)]
    pub clock_offset_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    /// Node name.
    pub from: String,
    pub to: String,
    pub delay: DelayModel,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub reorder: bool,
    /// Also install the reverse direction with the same parameters.
    #[serde(default)]
    pub bidirectional: bool,
}

impl LinkSpec {
    fn link(&self) -> SimLink {
        SimLink {
            delay: self.delay,
            loss_prob: self.loss_prob,
            reorder: self.reorder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredPathSpec {
    /// Node names.
    pub sender: String,
    pub reflector: String,
    #[serde(default)]
    pub ssid: Option<u16>,
    pub probes: u64,
    pub interval_ns: u64,
    /// Segments towards the reflector, by node name, first segment first.
    /// The reflector is appended as the last segment when the list is
    /// non-empty and does not already end with it.
    #[serde(default)]
    pub direct_sids: Vec<String>,
    #[serde(default)]
    pub return_sids: Vec<String>,
    #[serde(default)]
    pub delay_mode: DelayMode,
    #[serde(default)]
    pub reflector_mode: ReflectorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_unix_ns: i64,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub session: MeasuredPathSpec,
    /// Simulated time allowed after the last probe for replies to land.
    #[serde(default = "default_settle")]
    pub settle_ns: u64,
    /// How often the controller drains the sender's result queue.
    #[serde(default = "default_poll")]
    pub poll_period_ns: u64,
}

fn default_start() -> i64 {
    DEFAULT_START_UNIX_NS
}
fn default_settle() -> u64 {
    1_000_000_000
}
fn default_poll() -> u64 {
    1_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub ssid: u16,
    pub probes_sent: u64,
    pub records: Vec<MeasurementRecord>,
    /// Mean configured one-way delays along the direct and return paths;
    /// `None` when a hop has no link.
    pub configured_d_ns: Option<f64>,
    pub configured_r_ns: Option<f64>,
    pub summary: Option<Summary>,
    #[serde(skip)]
    pub series: DelaySeries,
    /// Result polls that failed after retries.
    pub poll_gaps: u64,
}

impl ScenarioReport {
    pub fn lost(&self) -> u64 {
        self.probes_sent.saturating_sub(self.records.len() as u64)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn addr_of(&self, name: &str) -> Result<Ipv6Addr, ScenarioError> {
        self.nodes
            .iter()
            .find(|n| n.name == name)
            .map(|n| n.addr)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown node `{name}`")))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut names = HashMap::new();
        for n in &self.nodes {
            if names.insert(n.name.as_str(), n.addr).is_some() {
                return Err(ScenarioError::Invalid(format!("duplicate node `{}`", n.name)));
            }
        }
        for l in &self.links {
            self.addr_of(&l.from)?;
            self.addr_of(&l.to)?;
            if !(0.0..=1.0).contains(&l.loss_prob) {
                return Err(ScenarioError::Invalid(format!(
                    "link {} -> {}: loss_prob {} outside [0, 1]",
                    l.from, l.to, l.loss_prob
                )));
            }
            if let DelayModel::Uniform { min_ns, max_ns } = l.delay {
                if min_ns > max_ns {
                    return Err(ScenarioError::Invalid(format!(
                        "link {} -> {}: min_ns > max_ns",
                        l.from, l.to
                    )));
                }
            }
        }
        let s = &self.session;
        self.addr_of(&s.sender)?;
        self.addr_of(&s.reflector)?;
        for sid in s.direct_sids.iter().chain(&s.return_sids) {
            self.addr_of(sid)?;
        }
        if s.ssid == Some(0) {
            return Err(ScenarioError::Invalid("session.ssid must be nonzero".into()));
        }
        if s.interval_ns == 0 {
            return Err(ScenarioError::Invalid("session.interval_ns must be nonzero".into()));
        }
        if self.poll_period_ns == 0 {
            return Err(ScenarioError::Invalid("poll_period_ns must be nonzero".into()));
        }
        Ok(())
    }

    fn sid_addrs(&self, names: &[String], last: &str) -> Result<Vec<Ipv6Addr>, ScenarioError> {
        let mut v = names.iter().map(|n| self.addr_of(n)).collect::<Result<Vec<_>, _>>()?;
        let end = self.addr_of(last)?;
        if !v.is_empty() && v.last() != Some(&end) {
            v.push(end);
        }
        Ok(v)
    }

    /// Sum of mean link delays from `from` through `via` in order.
    fn path_delay(&self, from: &str, via: &[Ipv6Addr]) -> Result<Option<f64>, ScenarioError> {
        let mut links = HashMap::new();
        for l in &self.links {
            let (a, b) = (self.addr_of(&l.from)?, self.addr_of(&l.to)?);
            let mean = match l.delay {
                DelayModel::Constant { ns } => ns as f64,
                DelayModel::Uniform { min_ns, max_ns } => (min_ns as f64 + max_ns as f64) / 2.0,
            };
            links.insert((a, b), mean);
            if l.bidirectional {
                links.insert((b, a), mean);
            }
        }
        let mut here = self.addr_of(from)?;
        let mut total = 0.0;
        for &next in via {
            match links.get(&(here, next)) {
                Some(d) => total += d,
                None => return Ok(None),
            }
            here = next;
        }
        Ok(Some(total))
    }

    /// Builds the network, creates and starts the measured path through the
    /// controller, lets the sender emit every probe, polls results and
    /// tears the path down again.
    pub fn run(&self) -> Result<ScenarioReport, ScenarioError> {
        self.validate()?;
        let net = SimNetwork::with_start(self.seed, self.start_unix_ns);
        let mut eps = HashMap::new();
        for n in &self.nodes {
            eps.insert(n.name.as_str(), net.add_endpoint(n.addr, n.clock_offset_ns));
        }
        for l in &self.links {
            let (a, b) = (self.addr_of(&l.from)?, self.addr_of(&l.to)?);
            if l.bidirectional {
                net.connect_both(a, b, l.link());
            } else {
                net.connect(a, b, l.link());
            }
        }

        let s = &self.session;
        let (s_addr, r_addr) = (self.addr_of(&s.sender)?, self.addr_of(&s.reflector)?);
        let sender = StampNode::new(NodeRole::Sender, eps[s.sender.as_str()].clone());
        let reflector = StampNode::new(NodeRole::Reflector, eps[s.reflector.as_str()].clone());
        let mut ctl = Controller::new(
            Box::new(InProcessClient::new(sender)),
            Box::new(InProcessClient::new(reflector)),
        )
        .with_init(NodeGlobalConfig::new(s_addr), NodeGlobalConfig::new(r_addr))
        .with_retry(RetryPolicy::immediate(1));

        let direct = self.sid_addrs(&s.direct_sids, &s.reflector)?;
        let ret = self.sid_addrs(&s.return_sids, &s.sender)?;
        let interval = Duration::from_nanos(s.interval_ns);
        let mut path = PathSpec::new(s_addr, r_addr, interval);
        path.ssid = s.ssid.and_then(Ssid::new);
        path.direct_sids = direct.clone();
        path.return_sids = ret.clone();
        path.delay_mode = s.delay_mode;
        path.reflector_mode = s.reflector_mode;

        let ssid = ctl.create_measured_path(&path)?;
        let t0 = net.now();
        ctl.start_path(ssid, Some(interval * s.probes as u32))?;

        let end = t0 + (s.interval_ns * s.probes + self.settle_ns) as i64;
        let mut series = DelaySeries::new(s.delay_mode);
        let mut records = Vec::new();
        let mut t = t0;
        while t < end {
            t = (t + self.poll_period_ns as i64).min(end);
            net.run_until(t);
            let batch = ctl.poll_once(ssid)?;
            for r in &batch {
                series.push(r);
            }
            records.extend(batch);
        }
        let probes_sent = ctl.status(NodeRole::Sender, ssid)?.packets;
        ctl.stop_path(ssid)?;
        ctl.destroy_path(ssid)?;

        let direct_hops = if direct.is_empty() { vec![r_addr] } else { direct };
        let return_hops = if ret.is_empty() { vec![s_addr] } else { ret };
        Ok(ScenarioReport {
            ssid: ssid.get(),
            probes_sent,
            configured_d_ns: self.path_delay(&s.sender, &direct_hops)?,
            configured_r_ns: self.path_delay(&s.reflector, &return_hops)?,
            summary: series.summary(),
            series,
            records,
            poll_gaps: ctl.gaps(),
        })
    }
}
