use std::io;
use std::net::{Ipv6Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use srv6_stamp::codec::STAMP_PORT;
use srv6_stamp::control::{control_addr_from_env, default_control_addr, NodeRole};
use srv6_stamp_cli::ctl::{
    self, CreateArgs, DelayModeArg, Endpoints, Format, ReflectorModeArg, ResultsArgs, Role,
};
use srv6_stamp_cli::exit::{finish, CliError, CliResult, Exit};

/// Drives STAMP sessions on a sender and a reflector daemon.
#[derive(Parser)]
#[command(name = "stampctl", version)]
struct Args {
    /// Sender control endpoint [default: STAMP_CONTROL_ADDR/PORT or [::1]:50052].
    #[arg(long, global = true)]
    sender: Option<SocketAddr>,
    /// Reflector control endpoint [default: same as the sender].
    #[arg(long, global = true)]
    reflector: Option<SocketAddr>,
    #[arg(long, global = true, value_enum, default_value = "binary")]
    format: Format,
    #[arg(long, global = true, default_value_t = 5000)]
    timeout_ms: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Creates the reflector side, then the sender side; prints the SSID.
    Create {
        /// Omit to let the controller pick one.
        #[arg(long)]
        ssid: Option<u16>,
        #[arg(long)]
        sender_addr: Ipv6Addr,
        #[arg(long)]
        reflector_addr: Ipv6Addr,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        /// Segment towards the reflector; repeat for a list.
        #[arg(long = "sid")]
        sids: Vec<Ipv6Addr>,
        /// Segment back to the sender; repeat for a list.
        #[arg(long = "return-sid")]
        return_sids: Vec<Ipv6Addr>,
        #[arg(long, default_value_t = STAMP_PORT)]
        sender_port: u16,
        #[arg(long, default_value_t = STAMP_PORT)]
        reflector_port: u16,
        /// STAMP port sent in Init to uninitialized nodes.
        #[arg(long)]
        stamp_port: Option<u16>,
        #[arg(long, value_enum, default_value = "two-way")]
        delay_mode: DelayModeArg,
        #[arg(long, value_enum, default_value = "stateless")]
        reflector_mode: ReflectorModeArg,
    },
    /// Starts the reflector side, then the sender side.
    Start {
        #[arg(long)]
        ssid: u16,
        /// Stop the sender after this long.
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    Stop {
        #[arg(long)]
        ssid: u16,
    },
    Destroy {
        #[arg(long)]
        ssid: u16,
    },
    /// Prints one node's view of a session as JSON.
    Status {
        #[arg(long)]
        ssid: u16,
        #[arg(long, value_enum, default_value = "sender")]
        role: Role,
    },
    /// Fetches queued results from the sender as CSV.
    Results {
        #[arg(long)]
        ssid: u16,
        /// Append to this file instead of writing to stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Keep polling until the session stops.
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 1000)]
        period_ms: u64,
        /// Stop following after this many records.
        #[arg(long)]
        count: Option<u64>,
        /// Selects whether the two-way column is filled.
        #[arg(long, value_enum, default_value = "two-way")]
        delay_mode: DelayModeArg,
    },
    /// Destroys all sessions and clears Init on the chosen nodes.
    Reset {
        #[arg(long, value_enum)]
        role: Option<Role>,
    },
}

fn endpoints(a: &Args) -> CliResult<Endpoints> {
    let sender = match a.sender {
        Some(s) => s,
        None => control_addr_from_env(default_control_addr())
            .map_err(|e| CliError::new(Exit::InvalidArgument, e))?,
    };
    Ok(Endpoints {
        sender,
        reflector: a.reflector.unwrap_or(sender),
        format: a.format.into(),
        timeout: Duration::from_millis(a.timeout_ms),
    })
}

fn main_inner(a: Args) -> CliResult<()> {
    let ep = endpoints(&a)?;
    let mut out = io::stdout().lock();
    match a.cmd {
        Cmd::Create {
            ssid,
            sender_addr,
            reflector_addr,
            interval_ms,
            sids,
            return_sids,
            sender_port,
            reflector_port,
            stamp_port,
            delay_mode,
            reflector_mode,
        } => ctl::create(
            &ep,
            &CreateArgs {
                ssid,
                sender_addr,
                reflector_addr,
                interval: Duration::from_millis(interval_ms),
                sids,
                return_sids,
                sender_port,
                reflector_port,
                stamp_port,
                delay_mode: delay_mode.into(),
                reflector_mode: reflector_mode.into(),
            },
            &mut out,
        ),
        Cmd::Start { ssid, duration_ms } => ctl::start(&ep, ssid, duration_ms.map(Duration::from_millis)),
        Cmd::Stop { ssid } => ctl::stop(&ep, ssid),
        Cmd::Destroy { ssid } => ctl::destroy(&ep, ssid),
        Cmd::Status { ssid, role } => ctl::status(&ep, ssid, role.into(), &mut out),
        Cmd::Results {
            ssid,
            csv,
            follow,
            period_ms,
            count,
            delay_mode,
        } => {
            let stop = Arc::new(AtomicBool::new(false));
            for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
                signal_hook::flag::register(sig, stop.clone())
                    .map_err(|e| CliError::new(Exit::Internal, e.to_string()))?;
            }
            ctl::results(
                &ep,
                &ResultsArgs {
                    ssid,
                    csv,
                    follow,
                    period: Duration::from_millis(period_ms),
                    count,
                    delay_mode: delay_mode.into(),
                },
                &mut out,
                &mut io::stderr(),
                &|| stop.load(Ordering::Relaxed),
            )
        }
        Cmd::Reset { role } => {
            let roles = match role {
                Some(r) => vec![NodeRole::from(r)],
                None if ep.sender == ep.reflector => vec![NodeRole::Sender],
                None => vec![NodeRole::Sender, NodeRole::Reflector],
            };
            ctl::reset(&ep, &roles)
        }
    }
}

fn main() -> ExitCode {
    srv6_stamp_cli::init_logging();
    finish(main_inner(Args::parse()))
}
