//! Minute-resolution instants. Storage is UTC; a parallel local wall-clock
//! string is kept next to every timestamp so SQL date functions can answer
//! "evening peak" style questions without timezone math.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const UTC_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
pub const LOCAL_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// A UTC instant truncated to whole minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn new(instant: DateTime<Utc>) -> Self {
        let secs = instant.timestamp();
        Timestamp(Utc.timestamp_opt(secs - secs.rem_euclid(60), 0).unwrap())
    }

    pub fn as_utc(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn plus_minutes(&self, minutes: i64) -> Self {
        Timestamp(self.0 + chrono::Duration::minutes(minutes))
    }

    pub fn local(&self, zone: Tz) -> NaiveDateTime {
        self.0.with_timezone(&zone).naive_local()
    }

    pub fn local_string(&self, zone: Tz) -> String {
        self.local(zone).format(LOCAL_FORMAT).to_string()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(UTC_FORMAT))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let naive = NaiveDateTime::parse_from_str(s, UTC_FORMAT)?;
        Ok(Timestamp::new(Utc.from_utc_datetime(&naive)))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    start: Timestamp,
    end: Timestamp,
}

impl TimeWindow {
    /// Returns `None` when the window would be empty.
    pub fn new(start: Timestamp, end: Timestamp) -> Option<Self> {
        (start < end).then_some(TimeWindow { start, end })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints_iso_utc() {
        let t: Timestamp = "2024-04-01T07:05:00Z".parse().unwrap();
        assert_eq!(t.to_string(), "2024-04-01T07:05:00Z");
        assert_eq!(t.local_string(chrono_tz::America::Los_Angeles), "2024-04-01 00:05:00");
    }

    #[test]
    fn truncates_to_minute() {
        let t = Timestamp::new(Utc.timestamp_opt(125, 0).unwrap());
        assert_eq!(t.as_utc().timestamp(), 120);
    }

    #[test]
    fn empty_window_rejected() {
        let t: Timestamp = "2024-04-01T07:05:00Z".parse().unwrap();
        assert!(TimeWindow::new(t, t).is_none());
        let w = TimeWindow::new(t, t.plus_minutes(1)).unwrap();
        assert!(w.contains(t));
        assert!(!w.contains(t.plus_minutes(1)));
    }
}
