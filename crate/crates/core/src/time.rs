//! UTC instants, day arithmetic and look-back windows.

use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: i64 = 3_600;

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_ymd_hms(year: i32, month: u32, day: u32, hour: u32, min: u32, sec: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day)?
            .and_hms_opt(hour, min, sec)
            .map(|dt| Timestamp(dt.and_utc().timestamp()))
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Timestamp(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
    }

    /// Calendar date (UTC) of this instant.
    pub fn date(self) -> NaiveDate {
        let days = self.0.div_euclid(SECONDS_PER_DAY);
        NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch") + chrono::TimeDelta::days(days)
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn saturating_sub_secs(self, secs: i64) -> Self {
        Timestamp(self.0.saturating_sub(secs))
    }

    /// RFC 3339 with a `Z` suffix and whole seconds.
    pub fn to_rfc3339(self) -> alloc::string::String {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => alloc::format!("{}", dt.format("%Y-%m-%dT%H:%M:%SZ")),
            None => alloc::format!("@{}", self.0),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid RFC 3339 timestamp: {0}")]
pub struct TimestampParseError(pub alloc::string::String);

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DateTime::parse_from_rfc3339(s.trim())
            .map(|dt| Timestamp(dt.timestamp()))
            .or_else(|_| {
                // Bare dates are accepted as midnight UTC.
                NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map(Timestamp::from_date)
            })
            .map_err(|_| TimestampParseError(s.into()))
    }
}

/// Whole days between `earlier` and `later`, floored. Negative if `earlier` is after `later`.
pub fn days_between(earlier: Timestamp, later: Timestamp) -> i64 {
    (later.0 - earlier.0).div_euclid(SECONDS_PER_DAY)
}

/// Completed years of age on `at` for someone born on `birth`.
pub fn age_in_years(birth: NaiveDate, at: NaiveDate) -> i64 {
    let mut years = i64::from(at.year() - birth.year());
    if (at.month(), at.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    years
}

/// Look-back window ending at the prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "alloc::string::String", into = "alloc::string::String")]
pub enum TimeWindow {
    Hours(u32),
    Days(u32),
    Unbounded,
}

impl TimeWindow {
    /// The sweep used for the time-window experiments: 1h, 1d, 7d, 30d, 365d, 1095d, unbounded.
    pub const SWEEP: [TimeWindow; 7] = [
        TimeWindow::Hours(1),
        TimeWindow::Days(1),
        TimeWindow::Days(7),
        TimeWindow::Days(30),
        TimeWindow::Days(365),
        TimeWindow::Days(1095),
        TimeWindow::Unbounded,
    ];

    pub fn seconds(self) -> Option<i64> {
        match self {
            TimeWindow::Hours(h) => Some(i64::from(h) * SECONDS_PER_HOUR),
            TimeWindow::Days(d) => Some(i64::from(d) * SECONDS_PER_DAY),
            TimeWindow::Unbounded => None,
        }
    }

    /// Inclusive lower bound of the window for a given cutoff.
    pub fn start(self, cutoff: Timestamp) -> Option<Timestamp> {
        self.seconds().map(|s| cutoff.saturating_sub_secs(s))
    }

    /// `cutoff - window <= t < cutoff`.
    pub fn contains(self, cutoff: Timestamp, t: Timestamp) -> bool {
        t < cutoff && self.start(cutoff).is_none_or(|lo| lo <= t)
    }
}

impl PartialOrd for TimeWindow {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeWindow {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        match (self.seconds(), other.seconds()) {
            (None, None) => core::cmp::Ordering::Equal,
            (None, Some(_)) => core::cmp::Ordering::Greater,
            (Some(_), None) => core::cmp::Ordering::Less,
            (Some(a), Some(b)) => a.cmp(&b),
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeWindow::Hours(h) => write!(f, "{h}h"),
            TimeWindow::Days(d) => write!(f, "{d}d"),
            TimeWindow::Unbounded => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid time window {0:?}: expected e.g. 1h, 30d or unbounded")]
pub struct TimeWindowParseError(pub alloc::string::String);

impl FromStr for TimeWindow {
    type Err = TimeWindowParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || TimeWindowParseError(s.into());
        if s.eq_ignore_ascii_case("unbounded") || s.eq_ignore_ascii_case("all") {
            return Ok(TimeWindow::Unbounded);
        }
        let (num, unit) = s.split_at(s.len().checked_sub(1).ok_or_else(err)?);
        let n: u32 = num.parse().map_err(|_| err())?;
        if n == 0 {
            return Err(err());
        }
        match unit {
            "h" => Ok(TimeWindow::Hours(n)),
            "d" => Ok(TimeWindow::Days(n)),
            _ => Err(err()),
        }
    }
}

impl TryFrom<alloc::string::String> for TimeWindow {
    type Error = TimeWindowParseError;
    fn try_from(s: alloc::string::String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TimeWindow> for alloc::string::String {
    fn from(w: TimeWindow) -> Self {
        alloc::format!("{w}")
    }
}
