//! `stampctl`: controller actions against running daemons.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::{Ipv6Addr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use srv6_stamp::analytics::DelaySeries;
use srv6_stamp::control::{
    ControlClient, ControlError, ControlReply, ControlRequest, Controller, NodeGlobalConfig, NodeRole, PathSpec, ReplyBody,
    TcpClient, WireFormat,
};
use srv6_stamp::exec::Parallelism;
use srv6_stamp::session::{DelayMode, ReflectorMode, SessionStatus, Ssid};

use crate::exit::{CliError, CliResult, Exit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Binary,
    Json,
}

impl From<Format> for WireFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Binary => WireFormat::Binary,
            Format::Json => WireFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Sender,
    Reflector,
}

impl From<Role> for NodeRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Sender => NodeRole::Sender,
            Role::Reflector => NodeRole::Reflector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DelayModeArg {
    OneWay,
    TwoWay,
}

impl From<DelayModeArg> for DelayMode {
    fn from(m: DelayModeArg) -> Self {
        match m {
            DelayModeArg::OneWay => DelayMode::OneWay,
            DelayModeArg::TwoWay => DelayMode::TwoWay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReflectorModeArg {
    Stateless,
    Stateful,
}

impl From<ReflectorModeArg> for ReflectorMode {
    fn from(m: ReflectorModeArg) -> Self {
        match m {
            ReflectorModeArg::Stateless => ReflectorMode::Stateless,
            ReflectorModeArg::Stateful => ReflectorMode::Stateful,
        }
    }
}

/// Where the two daemons listen and how to talk to them.
#[derive(Debug, Clone)]
pub struct Endpoints {
    pub sender: SocketAddr,
    pub reflector: SocketAddr,
    pub format: WireFormat,
    pub timeout: Duration,
}

impl Endpoints {
    fn connect(&self, role: NodeRole) -> CliResult<TcpClient> {
        let addr = match role {
            NodeRole::Sender => self.sender,
            NodeRole::Reflector => self.reflector,
        };
        Ok(TcpClient::connect(addr, self.format, self.timeout)?)
    }

    fn controller(&self) -> CliResult<Controller> {
        Ok(Controller::new(
            Box::new(self.connect(NodeRole::Sender)?),
            Box::new(self.connect(NodeRole::Reflector)?),
        ))
    }
}

/// Rejects SSID 0 before anything is sent.
pub fn ssid_arg(v: u16) -> CliResult<Ssid> {
    Ssid::new(v).ok_or_else(|| CliError::new(Exit::InvalidArgument, "SSID must be nonzero"))
}

#[derive(Debug, Clone)]
pub struct CreateArgs {
    pub ssid: Option<u16>,
    pub sender_addr: Ipv6Addr,
    pub reflector_addr: Ipv6Addr,
    pub interval: Duration,
    pub sids: Vec<Ipv6Addr>,
    pub return_sids: Vec<Ipv6Addr>,
    pub sender_port: u16,
    pub reflector_port: u16,
    pub stamp_port: Option<u16>,
    pub delay_mode: DelayMode,
    pub reflector_mode: ReflectorMode,
}

pub fn create(ep: &Endpoints, a: &CreateArgs, out: &mut dyn Write) -> CliResult<()> {
    let ssid = a.ssid.map(ssid_arg).transpose()?;
    if a.interval.is_zero() {
        return Err(CliError::new(Exit::InvalidArgument, "interval must be positive"));
    }
    let mut spec = PathSpec::new(a.sender_addr, a.reflector_addr, a.interval);
    spec.ssid = ssid;
    spec.direct_sids = a.sids.clone();
    spec.return_sids = a.return_sids.clone();
    spec.sender_port = a.sender_port;
    spec.reflector_port = a.reflector_port;
    spec.delay_mode = a.delay_mode;
    spec.reflector_mode = a.reflector_mode;
    let init = |addr| {
        let mut g = NodeGlobalConfig::new(addr);
        if let Some(p) = a.stamp_port {
            g.stamp_udp_port = p;
        }
        g
    };
    let mut c = ep
        .controller()?
        .with_init(init(a.sender_addr), init(a.reflector_addr));
    let ssid = c.create_measured_path(&spec)?;
    writeln!(out, "{ssid}").map_err(write_err)
}

pub fn start(ep: &Endpoints, ssid: u16, duration: Option<Duration>) -> CliResult<()> {
    let ssid = ssid_arg(ssid)?;
    Ok(ep.controller()?.start_path(ssid, duration)?)
}

pub fn stop(ep: &Endpoints, ssid: u16) -> CliResult<()> {
    let ssid = ssid_arg(ssid)?;
    Ok(ep.controller()?.stop_path(ssid)?)
}

pub fn destroy(ep: &Endpoints, ssid: u16) -> CliResult<()> {
    let ssid = ssid_arg(ssid)?;
    Ok(ep.controller()?.destroy_path(ssid)?)
}

pub fn status(ep: &Endpoints, ssid: u16, role: NodeRole, out: &mut dyn Write) -> CliResult<()> {
    let ssid = ssid_arg(ssid)?;
    let mut c = ep.connect(role)?;
    let info = match c.request(&ControlRequest::GetStampSessionStatus { ssid: ssid.get() })? {
        ReplyBody::Status(info) => info,
        other => return Err(CliError::new(Exit::Protocol, format!("unexpected reply {other:?}"))),
    };
    serde_json::to_writer(&mut *out, &info).map_err(|e| write_err(e.into()))?;
    writeln!(out).map_err(write_err)
}

pub fn reset(ep: &Endpoints, roles: &[NodeRole]) -> CliResult<()> {
    for &r in roles {
        ep.connect(r)?.request(&ControlRequest::Reset)?;
    }
    Ok(())
}

fn write_err(e: io::Error) -> CliError {
    CliError::new(Exit::WriteOutput, format!("cannot write output: {e}"))
}

#[derive(Debug, Clone)]
pub struct ResultsArgs {
    pub ssid: u16,
    pub csv: Option<PathBuf>,
    pub follow: bool,
    pub period: Duration,
    /// Stop following after this many records.
    pub count: Option<u64>,
    pub delay_mode: DelayMode,
}

/// Drains the sender's queue into a delay series written as CSV. With
/// `follow`, polls every period, appends new rows and reports the running
/// averages until the session stops, `count` records arrived, or `stop`
/// returns true.
pub fn results(
    ep: &Endpoints,
    a: &ResultsArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
    stop: &dyn Fn() -> bool,
) -> CliResult<()> {
    let ssid = ssid_arg(a.ssid)?;
    // Only the sender holds results; a controller is built around the
    // sender connection alone.
    let sender = ep.connect(NodeRole::Sender)?;
    let mut c = Controller::new(Box::new(sender), Box::new(Unused));
    let mut file = match &a.csv {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| CliError::new(Exit::WriteOutput, format!("cannot open {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let fresh = file
        .as_ref()
        .map(|f: &File| f.metadata().map(|m| m.len() == 0).unwrap_or(true))
        .unwrap_or(true);

    let mut series = DelaySeries::new(a.delay_mode);
    let mut written = 0usize;
    let mut header = fresh;
    loop {
        let batch = c.poll_once(ssid)?;
        let got = batch.len();
        series.extend(Parallelism::default(), &batch);
        {
            let sink: &mut dyn Write = match file.as_mut() {
                Some(f) => f,
                None => &mut *stdout,
            };
            if header || written < series.len() {
                series
                    .append_csv(sink, written, header)
                    .map_err(|e| CliError::new(Exit::WriteOutput, e.to_string()))?;
                header = false;
                written = series.len();
            }
        }
        if !a.follow {
            return Ok(());
        }
        if got > 0 {
            let w = series.welford();
            let line = format!(
                "records={} avg_d_ns={:.1} avg_r_ns={:.1}",
                w.count(),
                w.avg_d().unwrap_or(f64::NAN),
                w.avg_r().unwrap_or(f64::NAN)
            );
            // Averages share stdout only when the CSV goes to a file.
            let report: &mut dyn Write = if file.is_some() { &mut *stdout } else { &mut *stderr };
            writeln!(report, "{line}").map_err(write_err)?;
        }
        if a.count.is_some_and(|n| series.len() as u64 >= n) || stop() {
            return Ok(());
        }
        if got == 0 && c.status(NodeRole::Sender, ssid)?.status == SessionStatus::Stopped {
            return Ok(());
        }
        std::thread::sleep(a.period);
    }
}

/// Placeholder for the reflector side of a results-only controller.
struct Unused;

impl ControlClient for Unused {
    fn call(&mut self, req: &ControlRequest) -> Result<ControlReply, ControlError> {
        Err(ControlError::Protocol(format!(
            "{} needs the reflector endpoint",
            req.name()
        )))
    }
}
