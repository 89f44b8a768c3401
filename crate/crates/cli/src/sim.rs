//! `stampsim`: scenarios and loadgen experiments in simulated time.

use std::io::Write;
use std::path::Path;

use srv6_stamp::exec::Parallelism;
use srv6_stamp::loadgen::{pdr_search, run_trial, ExperimentSpec, PdrResult, TrialResult};
use srv6_stamp::scenario::{Scenario, ScenarioReport};

use crate::config::load_json;
use crate::exit::{CliError, CliResult, Exit};

fn out_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(Exit::WriteOutput, format!("cannot write output: {e}"))
}

/// Runs a scenario and returns its report.
pub fn run_scenario(path: &Path) -> CliResult<ScenarioReport> {
    Ok(Scenario::load(path)?.run()?)
}

fn ms(ns: Option<f64>) -> String {
    ns.map_or_else(|| "-".into(), |v| format!("{:.6}", v / 1e6))
}

/// Configured against measured delay per direction, in milliseconds.
pub fn write_report(rep: &ScenarioReport, out: &mut dyn Write) -> CliResult<()> {
    let (md, mr) = rep
        .summary
        .map_or((None, None), |s| (Some(s.avg_d_ns), Some(s.avg_r_ns)));
    let text = format!(
        "ssid {}\nprobes_sent {}\nrecords {}\nlost {}\npoll_gaps {}\n\
         direction  configured_ms  measured_avg_ms\n\
         direct     {:>13}  {:>15}\n\
         return     {:>13}  {:>15}\n",
        rep.ssid,
        rep.probes_sent,
        rep.records.len(),
        rep.lost(),
        rep.poll_gaps,
        ms(rep.configured_d_ns),
        ms(md),
        ms(rep.configured_r_ns),
        ms(mr),
    );
    out.write_all(text.as_bytes()).map_err(out_err)?;
    if let Some(s) = rep.summary {
        writeln!(
            out,
            "negative_samples {}\nmin_max_direct_ms {:.6} {:.6}\nmin_max_return_ms {:.6} {:.6}",
            s.negative,
            s.min_d_ns as f64 / 1e6,
            s.max_d_ns as f64 / 1e6,
            s.min_r_ns as f64 / 1e6,
            s.max_r_ns as f64 / 1e6
        )
        .map_err(out_err)?;
    }
    Ok(())
}

/// Writes the per-sample series as CSV; an empty series yields just the
/// header.
pub fn write_series_csv(rep: &ScenarioReport, out: &mut dyn Write) -> CliResult<()> {
    rep.series.append_csv(out, 0, true).map_err(out_err)
}

/// What a loadgen experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialResult>,
    pub pdr: Option<PdrResult>,
}

pub fn run_experiment(path: &Path, mode: Parallelism) -> CliResult<ExperimentOutcome> {
    let spec: ExperimentSpec = load_json(path)?;
    if spec.rates.is_empty() && spec.search.is_none() {
        return Err(CliError::new(
            Exit::InvalidInput,
            format!("{}: needs `rates`, `search` or both", path.display()),
        ));
    }
    let trials = spec
        .rates
        .iter()
        .map(|&r| run_trial(&spec.setup, r, 0))
        .collect::<Result<Vec<_>, _>>()?;
    let pdr = spec
        .search
        .as_ref()
        .map(|cfg| pdr_search(&spec.setup, cfg, mode))
        .transpose()?;
    Ok(ExperimentOutcome { trials, pdr })
}

/// Trial rows as CSV, then the search result as `key,value` lines after
/// a blank line.
pub fn write_experiment_csv(o: &ExperimentOutcome, out: &mut dyn Write) -> CliResult<()> {
    {
        let mut w = csv::Writer::from_writer(&mut *out);
        for t in &o.trials {
            w.serialize(t).map_err(out_err)?;
        }
        if o.trials.is_empty() {
            w.write_record(TRIAL_COLUMNS).map_err(out_err)?;
        }
        w.flush().map_err(out_err)?;
    }
    if let Some(p) = &o.pdr {
        writeln!(out).map_err(out_err)?;
        writeln!(out, "pdr_rate,{}", p.pdr_rate).map_err(out_err)?;
        writeln!(out, "drop_ratio_at_rate,{}", p.drop_ratio_at_rate).map_err(out_err)?;
        if let Some(h) = p.next_higher {
            writeln!(out, "next_higher_rate,{}\nnext_higher_drop_ratio,{}", h.rate, h.drop_ratio)
                .map_err(out_err)?;
        }
        writeln!(out, "probes,{}", p.trace.len()).map_err(out_err)?;
    }
    Ok(())
}

pub const TRIAL_COLUMNS: [&str; 10] = [
    "rate",
    "sent",
    "stamp_sent",
    "data_sent",
    "data_echoed",
    "stamp_delivered",
    "drops",
    "drop_ratio",
    "gate_dropped_stamp",
    "gate_dropped_data",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_columns_follow_the_struct() {
        let t = TrialResult {
            rate: 1.0,
            sent: 0,
            stamp_sent: 0,
            data_sent: 0,
            data_echoed: 0,
            stamp_delivered: 0,
            drops: 0,
            drop_ratio: 0.0,
            gate_dropped_stamp: 0,
            gate_dropped_data: 0,
        };
        let o = ExperimentOutcome {
            trials: vec![t],
            pdr: None,
        };
        let mut buf = Vec::new();
        write_experiment_csv(&o, &mut buf).unwrap();
        let head = String::from_utf8(buf).unwrap();
        assert_eq!(head.lines().next().unwrap(), TRIAL_COLUMNS.join(","));
    }
}
