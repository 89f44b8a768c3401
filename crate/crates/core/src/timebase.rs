//! Clocks producing NTP timestamps, and exact timestamp arithmetic.
//!
//! A [`Clock`] reads either the host wall clock or a shared [`SimTime`]
//! and adds a fixed offset, which models a peer whose clock is not
//! synchronized. Simulated time moves only when its owner advances it.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::codec::{ErrorEstimate, NtpTimestamp};

/// Seconds between 1900-01-01 (NTP era 0) and 1970-01-01.
pub const NTP_UNIX_OFFSET_SECS: i64 = 2_208_988_800;
const NANOS_PER_SEC: i128 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TimeError {
    #[error("instant {unix_nanos} ns is outside NTP era 0")]
    EraOverflow { unix_nanos: i128 },
}

/// Converts Unix-epoch nanoseconds to an era-0 NTP timestamp. The fraction
/// is truncated, so the result is at most one fraction unit (~0.233 ns)
/// early.
pub fn unix_nanos_to_ntp(unix_nanos: i128) -> Result<NtpTimestamp, TimeError> {
    let secs = unix_nanos.div_euclid(NANOS_PER_SEC);
    let nanos = unix_nanos.rem_euclid(NANOS_PER_SEC);
    let ntp_secs = secs + i128::from(NTP_UNIX_OFFSET_SECS);
    if !(0..=i128::from(u32::MAX)).contains(&ntp_secs) {
        return Err(TimeError::EraOverflow { unix_nanos });
    }
    let fraction = ((nanos << 32) / NANOS_PER_SEC) as u32;
    Ok(NtpTimestamp::new(ntp_secs as u32, fraction))
}

/// Inverse of [`unix_nanos_to_ntp`], rounding the fraction to the nearest
/// nanosecond. Exact for timestamps produced by the forward conversion.
pub fn ntp_to_unix_nanos(t: NtpTimestamp) -> i128 {
    let secs = i128::from(t.seconds) - i128::from(NTP_UNIX_OFFSET_SECS);
    secs * NANOS_PER_SEC + frac_units_to_nanos(i128::from(t.fraction))
}

/// Rounds `units` of 2^-32 s to nanoseconds, half away from zero.
fn frac_units_to_nanos(units: i128) -> i128 {
    let scaled = units * NANOS_PER_SEC;
    let half = 1i128 << 31;
    if scaled >= 0 {
        (scaled + half) >> 32
    } else {
        -((-scaled + half) >> 32)
    }
}

/// `a - b` in nanoseconds, rounded to the nearest nanosecond.
///
/// Seconds are differenced as signed 64-bit values, so the result is
/// meaningful for timestamps within the same era.
pub fn ntp_diff(a: NtpTimestamp, b: NtpTimestamp) -> i64 {
    let secs = i128::from(a.seconds) - i128::from(b.seconds);
    let frac = i128::from(a.fraction) - i128::from(b.fraction);
    frac_units_to_nanos((secs << 32) + frac) as i64
}

/// Shared simulated instant, in Unix-epoch nanoseconds.
#[derive(Debug, Default)]
pub struct SimTime {
    now: AtomicI64,
}

impl SimTime {
    pub fn new(start_unix_nanos: i64) -> Arc<Self> {
        Arc::new(SimTime {
            now: AtomicI64::new(start_unix_nanos),
        })
    }

    pub fn now(&self) -> i64 {
        self.now.load(Ordering::Acquire)
    }

    pub fn advance(&self, by: Duration) {
        self.now.fetch_add(by.as_nanos() as i64, Ordering::AcqRel);
    }

    /// Moves time forward to `t`; earlier instants are ignored.
    pub fn advance_to(&self, t: i64) {
        self.now.fetch_max(t, Ordering::AcqRel);
    }
}

#[derive(Debug, Clone)]
enum Source {
    /// Largest reading handed out so far; keeps reads non-decreasing across
    /// host clock steps.
    Host(Arc<AtomicI64>),
    Simulated(Arc<SimTime>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    Host,
    Simulated,
}

/// A clock with a fixed offset from true time.
#[derive(Debug, Clone)]
pub struct Clock {
    source: Source,
    offset_ns: i64,
    error_estimate: ErrorEstimate,
}

impl Clock {
    pub fn host() -> Self {
        Clock {
            source: Source::Host(Arc::new(AtomicI64::new(i64::MIN))),
            offset_ns: 0,
            error_estimate: ErrorEstimate::default(),
        }
    }

    /// Simulated clocks report themselves synchronized: their only error is
    /// the configured offset, which the harness knows.
    pub fn simulated(time: Arc<SimTime>) -> Self {
        Clock {
            source: Source::Simulated(time),
            offset_ns: 0,
            error_estimate: ErrorEstimate {
                synchronized: true,
                ..ErrorEstimate::default()
            },
        }
    }

    pub fn with_offset(mut self, offset_ns: i64) -> Self {
        self.offset_ns = offset_ns;
        self
    }

    pub fn with_error_estimate(mut self, ee: ErrorEstimate) -> Self {
        self.error_estimate = ee;
        self
    }

    pub fn kind(&self) -> ClockKind {
        match self.source {
            Source::Host(_) => ClockKind::Host,
            Source::Simulated(_) => ClockKind::Simulated,
        }
    }

    pub fn offset_ns(&self) -> i64 {
        self.offset_ns
    }

    /// Error Estimate advertised in packets stamped by this clock.
    pub fn error_estimate(&self) -> ErrorEstimate {
        self.error_estimate
    }

    /// True instant, without the offset.
    pub fn true_unix_nanos(&self) -> i64 {
        match &self.source {
            Source::Host(last) => {
                let now = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_nanos() as i64)
                    .unwrap_or(0);
                let prev = last.fetch_max(now, Ordering::AcqRel);
                prev.max(now)
            }
            Source::Simulated(t) => t.now(),
        }
    }

    /// Local reading: true instant plus offset.
    pub fn now_unix_nanos(&self) -> i64 {
        self.true_unix_nanos().saturating_add(self.offset_ns)
    }

    pub fn now_ntp(&self) -> Result<NtpTimestamp, TimeError> {
        unix_nanos_to_ntp(i128::from(self.now_unix_nanos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference conversion through floating seconds, independent of the
    /// integer path above.
    fn reference_ntp(unix_secs: f64) -> (u32, u32) {
        let ntp = unix_secs + 2_208_988_800.0;
        let secs = ntp.floor();
        let frac = ((ntp - secs) * 4_294_967_296.0).floor();
        (secs as u32, frac as u32)
    }

    #[test]
    fn unix_epoch_maps_to_era_offset() {
        let t = unix_nanos_to_ntp(0).unwrap();
        assert_eq!(t, NtpTimestamp::new(2_208_988_800, 0));
        assert_eq!((t.seconds, t.fraction), reference_ntp(0.0));
        let clock = Clock::simulated(SimTime::new(0));
        assert_eq!(clock.now_ntp().unwrap(), t);
    }

    #[test]
    fn half_second_fraction() {
        let t = unix_nanos_to_ntp(500_000_000).unwrap();
        assert_eq!(t.fraction, 0x8000_0000);
        assert_eq!((t.seconds, t.fraction), reference_ntp(0.5));
        let q = unix_nanos_to_ntp(250_000_000).unwrap();
        assert_eq!((q.seconds, q.fraction), reference_ntp(0.25));
    }

    #[test]
    fn one_second_advance() {
        let time = SimTime::new(1_700_000_000_123_456_789);
        let clock = Clock::simulated(time.clone());
        let a = clock.now_ntp().unwrap();
        time.advance(Duration::from_secs(1));
        let b = clock.now_ntp().unwrap();
        assert_eq!(b.seconds, a.seconds + 1);
        assert_eq!(b.fraction, a.fraction);
    }

    #[test]
    fn era_overflow() {
        let before = -(NTP_UNIX_OFFSET_SECS as i128) * 1_000_000_000 - 1;
        assert!(matches!(
            unix_nanos_to_ntp(before),
            Err(TimeError::EraOverflow { .. })
        ));
        let start = -(NTP_UNIX_OFFSET_SECS as i128) * 1_000_000_000;
        assert_eq!(unix_nanos_to_ntp(start).unwrap(), NtpTimestamp::new(0, 0));
        // 2036-02-07T06:28:16Z rolls era 0 over.
        let rollover = (u32::MAX as i128 + 1 - NTP_UNIX_OFFSET_SECS as i128) * 1_000_000_000;
        assert!(unix_nanos_to_ntp(rollover).is_err());
        assert!(unix_nanos_to_ntp(rollover - 1).is_ok());
    }

    #[test]
    fn diff_examples() {
        let b = NtpTimestamp::new(3_900_000_000, 0x1234_5678);
        assert_eq!(ntp_diff(b, b), 0);
        let a = NtpTimestamp::new(b.seconds + 1, b.fraction);
        assert_eq!(ntp_diff(a, b), 1_000_000_000);
        assert_eq!(ntp_diff(b, a), -1_000_000_000);
        let h = NtpTimestamp::from_bits(b.to_bits() + 0x8000_0000);
        // 2^31 / 2^32 * 1e9, brute-checked with f64.
        let expect = (0x8000_0000u64 as f64 / 4_294_967_296.0 * 1e9).round() as i64;
        assert_eq!(expect, 500_000_000);
        assert!((ntp_diff(h, b) - expect).abs() <= 1);
    }

    #[test]
    fn round_trip_is_exact_for_sampled_instants() {
        let mut x: i128 = 1_600_000_000_000_000_000;
        for step in [1i128, 7, 233, 999_999, 123_456_789, 1_000_000_007] {
            for _ in 0..2000 {
                x += step;
                let t = unix_nanos_to_ntp(x).unwrap();
                assert_eq!(ntp_to_unix_nanos(t), x);
            }
        }
    }

    #[test]
    fn offset_and_monotonic_host() {
        let time = SimTime::new(1_000_000_000_000_000_000);
        let c = Clock::simulated(time.clone()).with_offset(-3_000_000);
        assert_eq!(c.now_unix_nanos(), 1_000_000_000_000_000_000 - 3_000_000);
        assert_eq!(c.true_unix_nanos(), 1_000_000_000_000_000_000);
        time.advance_to(5);
        assert_eq!(time.now(), 1_000_000_000_000_000_000, "time never goes back");

        let host = Clock::host();
        let mut prev = host.now_unix_nanos();
        for _ in 0..1000 {
            let n = host.now_unix_nanos();
            assert!(n >= prev);
            prev = n;
        }
        assert_eq!(host.kind(), ClockKind::Host);
    }
}
