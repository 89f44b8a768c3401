//! Delay computation, running averages and series export.
//!
//! Delays are integer nanoseconds: direct `T2 - T1`, return `T4 - T3`.
//! Running averages use Welford's update over `f64` nanoseconds with the
//! post-increment count. Negative delays (clock offset larger than the
//! path delay) are kept as-is.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::exec::{self, Parallelism};
use crate::session::{DelayMode, MeasurementRecord};
use crate::timebase::ntp_diff;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Direct and return delay of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySample {
    pub sample_index: u64,
    /// Collector reception time, Unix nanoseconds.
    pub wall_time: i64,
    pub d_d_ns: i64,
    pub d_r_ns: i64,
}

impl DelaySample {
    pub fn from_record(index: u64, r: &MeasurementRecord) -> Self {
        let (d_d_ns, d_r_ns) = delays(r);
        DelaySample {
            sample_index: index,
            wall_time: r.received_at,
            d_d_ns,
            d_r_ns,
        }
    }

    /// Either direction came out negative.
    pub fn is_negative(&self) -> bool {
        self.d_d_ns < 0 || self.d_r_ns < 0
    }

    pub fn two_way_ns(&self) -> i64 {
        self.d_d_ns + self.d_r_ns
    }
}

/// `(T2 - T1, T4 - T3)` in nanoseconds.
pub fn delays(r: &MeasurementRecord) -> (i64, i64) {
    (ntp_diff(r.t2, r.t1), ntp_diff(r.t4, r.t3))
}

/// Delays for a batch of records, in order.
pub fn delays_batch(mode: Parallelism, records: &[MeasurementRecord]) -> Vec<(i64, i64)> {
    exec::map(mode, records, delays)
}

/// Running averages of both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WelfordState {
    n: u64,
    avg_d: f64,
    avg_r: f64,
}

impl WelfordState {
    pub fn update(&mut self, d_d_ns: i64, d_r_ns: i64) {
        self.n += 1;
        let n = self.n as f64;
        self.avg_d += (d_d_ns as f64 - self.avg_d) / n;
        self.avg_r += (d_r_ns as f64 - self.avg_r) / n;
    }

    pub fn push(&mut self, s: &DelaySample) {
        self.update(s.d_d_ns, s.d_r_ns);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Mean direct delay; `None` before the first sample.
    pub fn avg_d(&self) -> Option<f64> {
        (self.n > 0).then_some(self.avg_d)
    }

    pub fn avg_r(&self) -> Option<f64> {
        (self.n > 0).then_some(self.avg_r)
    }
}

/// One exported row: a sample and the running averages after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub sample_index: u64,
    pub wall_time: i64,
    pub d_d_ns: i64,
    pub d_r_ns: i64,
    pub avg_d_ns: f64,
    pub avg_r_ns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_way_ns: Option<i64>,
}

impl SeriesRow {
    pub fn sample(&self) -> DelaySample {
        DelaySample {
            sample_index: self.sample_index,
            wall_time: self.wall_time,
            d_d_ns: self.d_d_ns,
            d_r_ns: self.d_r_ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    /// Picks the format from a file extension; CSV unless `.json`.
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ExportFormat::Json,
            _ => ExportFormat::Csv,
        }
    }
}

/// Summary over a whole series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub avg_d_ns: f64,
    pub avg_r_ns: f64,
    pub min_d_ns: i64,
    pub max_d_ns: i64,
    pub min_r_ns: i64,
    pub max_r_ns: i64,
    pub negative: u64,
}

/// Per-session delay series as built by the controller from polled
/// records.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySeries {
    delay_mode: DelayMode,
    rows: Vec<SeriesRow>,
    welford: WelfordState,
}

impl DelaySeries {
    pub fn new(delay_mode: DelayMode) -> Self {
        DelaySeries {
            delay_mode,
            rows: Vec::new(),
            welford: WelfordState::default(),
        }
    }

    pub fn delay_mode(&self) -> DelayMode {
        self.delay_mode
    }

    pub fn push_sample(&mut self, d_d_ns: i64, d_r_ns: i64, wall_time: i64) -> &SeriesRow {
        self.welford.update(d_d_ns, d_r_ns);
        let row = SeriesRow {
            sample_index: self.rows.len() as u64,
            wall_time,
            d_d_ns,
            d_r_ns,
            avg_d_ns: self.welford.avg_d,
            avg_r_ns: self.welford.avg_r,
            two_way_ns: (self.delay_mode == DelayMode::TwoWay).then_some(d_d_ns + d_r_ns),
        };
        self.rows.push(row);
        self.rows.last().unwrap()
    }

    pub fn push(&mut self, r: &MeasurementRecord) -> &SeriesRow {
        let (d, rr) = delays(r);
        self.push_sample(d, rr, r.received_at)
    }

    /// Appends a polled batch. Delays are computed as a batch; the running
    /// averages are then folded in order.
    pub fn extend(&mut self, mode: Parallelism, records: &[MeasurementRecord]) {
        let ds = delays_batch(mode, records);
        self.rows.reserve(ds.len());
        for (r, (d, rr)) in records.iter().zip(ds) {
            self.push_sample(d, rr, r.received_at);
        }
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn welford(&self) -> WelfordState {
        self.welford
    }

    pub fn summary(&self) -> Option<Summary> {
        let first = self.rows.first()?;
        let mut s = Summary {
            count: self.welford.n,
            avg_d_ns: self.welford.avg_d,
            avg_r_ns: self.welford.avg_r,
            min_d_ns: first.d_d_ns,
            max_d_ns: first.d_d_ns,
            min_r_ns: first.d_r_ns,
            max_r_ns: first.d_r_ns,
            negative: 0,
        };
        for r in &self.rows {
            s.min_d_ns = s.min_d_ns.min(r.d_d_ns);
            s.max_d_ns = s.max_d_ns.max(r.d_d_ns);
            s.min_r_ns = s.min_r_ns.min(r.d_r_ns);
            s.max_r_ns = s.max_r_ns.max(r.d_r_ns);
            s.negative += u64::from(r.sample().is_negative());
        }
        Some(s)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), AnalyticsError> {
        if self.rows.is_empty() {
            return Err(AnalyticsError::EmptySeries);
        }
        self.append_csv(w, 0, true)
    }

    /// Writes rows `from..` as CSV, with the header line first when
    /// `header` is set. Used to stream a growing series to one file.
    pub fn append_csv(&self, w: impl Write, from: usize, header: bool) -> Result<(), AnalyticsError> {
        let fmt = |e: csv::Error| AnalyticsError::Format(e.to_string());
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(self.header()).map_err(fmt)?;
        }
        for r in self.rows.get(from..).unwrap_or_default() {
            out.write_record(csv_fields(r, self.delay_mode)).map_err(fmt)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: impl Write) -> Result<(), AnalyticsError> {
        if self.rows.is_empty() {
            return Err(AnalyticsError::EmptySeries);
        }
        serde_json::to_writer_pretty(w, &self.rows).map_err(|e| AnalyticsError::Format(e.to_string()))
    }

    pub fn header(&self) -> &'static [&'static str] {
        match self.delay_mode {
            DelayMode::OneWay => &CSV_COLUMNS[..6],
            DelayMode::TwoWay => &CSV_COLUMNS,
        }
    }

    pub fn export(&self, path: &Path, format: ExportFormat) -> Result<(), AnalyticsError> {
        if self.rows.is_empty() {
            return Err(AnalyticsError::EmptySeries);
        }
        let w = BufWriter::new(File::create(path)?);
        match format {
            ExportFormat::Csv => self.write_csv(w),
            ExportFormat::Json => self.write_json(w),
        }
    }

    /// Reads a series written by [`export`](Self::export). The delay mode
    /// follows from the presence of the two-way column.
    pub fn import(path: &Path, format: ExportFormat) -> Result<Self, AnalyticsError> {
        let r = BufReader::new(File::open(path)?);
        match format {
            ExportFormat::Csv => Self::read_csv(r),
            ExportFormat::Json => Self::read_json(r),
        }
    }

    pub fn read_csv(r: impl Read) -> Result<Self, AnalyticsError> {
        let fmt = |e: csv::Error| AnalyticsError::Format(e.to_string());
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(fmt)?.clone();
        let mut rows = Vec::new();
        for rec in rd.deserialize::<SeriesRow>() {
            rows.push(rec.map_err(fmt)?);
        }
        let mode = if headers.iter().any(|h| h == "two_way_ns") {
            DelayMode::TwoWay
        } else {
            DelayMode::OneWay
        };
        Self::from_rows(mode, rows)
    }

    pub fn read_json(r: impl Read) -> Result<Self, AnalyticsError> {
        let rows: Vec<SeriesRow> =
            serde_json::from_reader(r).map_err(|e| AnalyticsError::Format(e.to_string()))?;
        let mode = if rows.first().is_some_and(|r| r.two_way_ns.is_some()) {
            DelayMode::TwoWay
        } else {
            DelayMode::OneWay
        };
        Self::from_rows(mode, rows)
    }

    fn from_rows(delay_mode: DelayMode, rows: Vec<SeriesRow>) -> Result<Self, AnalyticsError> {
        if rows.is_empty() {
            return Err(AnalyticsError::EmptySeries);
        }
        let mut welford = WelfordState::default();
        for r in &rows {
            welford.update(r.d_d_ns, r.d_r_ns);
        }
        Ok(DelaySeries {
            delay_mode,
            rows,
            welford,
        })
    }
}

pub const CSV_COLUMNS: [&str; 7] = [
    "sample_index",
    "wall_time",
    "d_d_ns",
    "d_r_ns",
    "avg_d_ns",
    "avg_r_ns",
    "two_way_ns",
];

fn csv_fields(r: &SeriesRow, mode: DelayMode) -> Vec<String> {
    let mut v = vec![
        r.sample_index.to_string(),
        r.wall_time.to_string(),
        r.d_d_ns.to_string(),
        r.d_r_ns.to_string(),
        r.avg_d_ns.to_string(),
        r.avg_r_ns.to_string(),
    ];
    if mode == DelayMode::TwoWay {
        v.push(r.two_way_ns.unwrap_or(r.d_d_ns + r.d_r_ns).to_string());
    }
    v
}
