use std::net::{Ipv6Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use srv6_stamp::control::NodeRole;
use srv6_stamp_cli::config::TransportKind;
use srv6_stamp_cli::ctl::Role;
use srv6_stamp_cli::daemon::{run, DaemonOptions};
use srv6_stamp_cli::exit::finish;

/// Runs a STAMP Session-Sender or Session-Reflector node behind a control
/// endpoint. Prints the bound control address on stdout, then serves until
/// SIGINT or SIGTERM.
#[derive(Parser)]
#[command(name = "stampd", version)]
struct Args {
    role: Role,
    /// JSON daemon config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Control endpoint; overrides the file and STAMP_CONTROL_ADDR/PORT.
    #[arg(long)]
    control: Option<SocketAddr>,
    #[arg(long, value_enum)]
    transport: Option<TransportKind>,
    /// Source address used by the startup Init.
    #[arg(long)]
    src: Option<Ipv6Addr>,
    /// STAMP UDP port used by the startup Init.
    #[arg(long)]
    stamp_port: Option<u16>,
}

fn main() -> ExitCode {
    srv6_stamp_cli::init_logging();
    let a = Args::parse();
    finish(run(&DaemonOptions {
        role: NodeRole::from(a.role),
        config: a.config,
        control: a.control,
        transport: a.transport,
        src: a.src,
        stamp_port: a.stamp_port,
    }))
}
