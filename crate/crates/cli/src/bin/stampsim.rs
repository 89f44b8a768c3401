use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srv6_stamp::exec::Parallelism;
use srv6_stamp_cli::exit::{finish, CliError, CliResult, Exit};
use srv6_stamp_cli::sim;

/// Runs measurements and loadgen experiments in simulated time.
#[derive(Parser)]
#[command(name = "stampsim", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs a scenario and prints configured against measured delays.
    Run {
        scenario: PathBuf,
        /// Also write the per-sample series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Runs fixed-rate trials and an optional PDR search; writes CSV.
    Loadgen {
        experiment: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run the trials of each probed rate one after another.
        #[arg(long)]
        sequential: bool,
    },
}

fn create(path: &PathBuf) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new(Exit::WriteOutput, format!("cannot create {}: {e}", path.display())))
}

fn flush(mut w: impl Write) -> CliResult<()> {
    w.flush().map_err(|e| CliError::new(Exit::WriteOutput, e.to_string()))
}

fn main_inner(a: Args) -> CliResult<()> {
    let stdout = io::stdout();
    match a.cmd {
        Cmd::Run { scenario, csv, json } => {
            let rep = sim::run_scenario(&scenario)?;
            if let Some(p) = csv {
                let mut f = create(&p)?;
                sim::write_series_csv(&rep, &mut f)?;
                flush(f)?;
            }
            let mut out = stdout.lock();
            if json {
                serde_json::to_writer_pretty(&mut out, &rep)
                    .map_err(|e| CliError::new(Exit::WriteOutput, e.to_string()))?;
                writeln!(out).map_err(|e| CliError::new(Exit::WriteOutput, e.to_string()))?;
            } else {
                sim::write_report(&rep, &mut out)?;
            }
            flush(out)
        }
        Cmd::Loadgen {
            experiment,
            csv,
            sequential,
        } => {
            let mode = if sequential {
                Parallelism::Sequential
            } else {
                Parallelism::Parallel
            };
            let o = sim::run_experiment(&experiment, mode)?;
            match csv {
                Some(p) => {
                    let mut f = create(&p)?;
                    sim::write_experiment_csv(&o, &mut f)?;
                    flush(f)
                }
                None => {
                    let mut out = stdout.lock();
                    sim::write_experiment_csv(&o, &mut out)?;
                    flush(out)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    srv6_stamp_cli::init_logging();
    finish(main_inner(Args::parse()))
}
