//! Traffic network domain model and the analytic formulas computed from
//! loop-detector data: traffic performance score (TPS), vehicle miles of
//! travel (VMT) and emissions.

mod csv_io;
mod synth;
pub mod time;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{table_file_name, CsvError};
pub use synth::{generate_synthetic_network, SynthConfig};
pub use time::{TimeWindow, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("empty input")]
    EmptyInput,
    #[error("total volume-length weight is zero; TPS is undefined")]
    ZeroWeight,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    S,
    E,
    W,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::S => "S",
            Direction::E => "E",
            Direction::W => "W",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(Direction::N),
            "S" => Ok(Direction::S),
            "E" => Ok(Direction::E),
            "W" => Ok(Direction::W),
            other => Err(TrafficError::InvalidInput(format!("unknown direction '{other}'"))),
        }
    }
}

/// General-purpose or high-occupancy (carpool) lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LaneClass {
    #[serde(rename = "GP")]
    GeneralPurpose,
    #[serde(rename = "HOV")]
    Hov,
}

impl LaneClass {
    pub const ALL: [LaneClass; 2] = [LaneClass::GeneralPurpose, LaneClass::Hov];

    pub fn as_str(&self) -> &'static str {
        match self {
            LaneClass::GeneralPurpose => "GP",
            LaneClass::Hov => "HOV",
        }
    }
}

impl fmt::Display for LaneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One loop detector (a row of `dbo.cabinets`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub detector_id: String,
    pub unit_name: String,
    pub cabinet_id: String,
    pub route: String,
    pub direction: Direction,
    pub milepost: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub lane_class: LaneClass,
    pub segment_id: String,
}

/// Cabinet station location (a row of `dbo.cabinfo`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cabinet {
    pub cabinet_id: String,
    pub station_name: String,
    pub district: String,
    pub county: String,
    pub route: String,
    pub milepost: f64,
}

/// One minute of detector data (a row of `dbo.MinuteDataNW`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopObservation {
    pub detector_id: String,
    pub timestamp: Timestamp,
    pub local_time: String,
    /// mph
    pub speed: f64,
    /// vehicles per minute
    pub volume: u32,
    pub occupancy: f64,
}

/// Directed stretch of a route (a row of `dbo.Segments`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub route: String,
    pub direction: Direction,
    pub begin_milepost: f64,
    pub end_milepost: f64,
    pub length_miles: f64,
    /// Ordered by milepost, then id. Not a column; rebuilt from `dbo.cabinets`.
    #[serde(skip)]
    pub member_detectors: Vec<String>,
}

/// Segment/lane-class performance for one minute (a row of `dbo.SegmentTrafficIndex`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficIndexRecord {
    pub segment_id: String,
    pub route: String,
    pub timestamp: Timestamp,
    pub local_time: String,
    pub lane_class: LaneClass,
    /// Volume-weighted mean speed, mph.
    pub avg_speed: f64,
    pub total_volume: u32,
    pub tps: f64,
}

/// Daily statistics per segment and lane class (a row of `dbo.TrafficIndex`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTrafficStats {
    pub segment_id: String,
    pub local_date: String,
    pub day_of_week: String,
    pub lane_class: LaneClass,
    pub avg_tps: f64,
    pub min_tps: f64,
    pub max_tps: f64,
    pub avg_speed: f64,
    pub vmt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// mph
    pub free_flow_speed: f64,
    /// grams CO2e per vehicle-mile
    pub emission_factor: f64,
    /// IANA zone name
    pub local_timezone: String,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            free_flow_speed: 60.0,
            emission_factor: 400.0,
            local_timezone: "America/Los_Angeles".to_string(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.free_flow_speed > 0.0 && self.free_flow_speed.is_finite()) {
            return Err(TrafficError::InvalidConfig("free_flow_speed must be positive".into()));
        }
        if !(self.emission_factor > 0.0 && self.emission_factor.is_finite()) {
            return Err(TrafficError::InvalidConfig("emission_factor must be positive".into()));
        }
        self.zone().map(|_| ())
    }

    pub fn zone(&self) -> Result<Tz, TrafficError> {
        self.local_timezone
            .parse()
            .map_err(|_| TrafficError::InvalidConfig(format!("unknown time zone '{}'", self.local_timezone)))
    }
}

/// A complete traffic database: the six tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub network: NetworkConfig,
    pub detectors: Vec<Detector>,
    pub cabinets: Vec<Cabinet>,
    pub segments: Vec<Segment>,
    pub observations: Vec<LoopObservation>,
    pub segment_index: Vec<TrafficIndexRecord>,
    pub daily_stats: Vec<DailyTrafficStats>,
}

impl Dataset {
    /// Vehicle miles of travel over `window`, joining observations to the
    /// length of the segment their detector belongs to.
    pub fn vmt(&self, window: &TimeWindow) -> f64 {
        let lengths: HashMap<&str, f64> =
            self.segments.iter().map(|s| (s.segment_id.as_str(), s.length_miles)).collect();
        let detector_length: HashMap<&str, f64> = self
            .detectors
            .iter()
            .filter_map(|d| lengths.get(d.segment_id.as_str()).map(|l| (d.detector_id.as_str(), *l)))
            .collect();
        compute_vmt(
            self.observations.iter().filter_map(|o| {
                detector_length
                    .get(o.detector_id.as_str())
                    .map(|len| VmtInput { timestamp: o.timestamp, volume: f64::from(o.volume), length_miles: *len })
            }),
            window,
        )
    }
}

/// One `(V, Q, L)` term of the performance score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpsInput {
    pub speed: f64,
    pub volume: f64,
    pub length_miles: f64,
}

impl TpsInput {
    pub fn new(speed: f64, volume: f64, length_miles: f64) -> Self {
        TpsInput { speed, volume, length_miles }
    }
}

/// Unclamped traffic performance score: `100 · Σ V·Q·L / Σ V_f·Q·L`.
pub fn compute_tps_raw(inputs: &[TpsInput], free_flow_speed: f64) -> Result<f64, TrafficError> {
    if !(free_flow_speed > 0.0 && free_flow_speed.is_finite()) {
        return Err(TrafficError::InvalidInput("free-flow speed must be positive".into()));
    }
    if inputs.is_empty() {
        return Err(TrafficError::EmptyInput);
    }
    let mut numerator = 0.0;
    let mut weight = 0.0;
    for term in inputs {
        for (name, value) in [("speed", term.speed), ("volume", term.volume), ("length", term.length_miles)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(TrafficError::InvalidInput(format!("{name} must be a non-negative number, got {value}")));
            }
        }
        let ql = term.volume * term.length_miles;
        numerator += term.speed * ql;
        weight += ql;
    }
    if weight == 0.0 {
        return Err(TrafficError::ZeroWeight);
    }
    Ok(100.0 * numerator / (free_flow_speed * weight))
}

/// Traffic performance score in `[0, 100]`; 0 is the worst condition and
/// 100 is free flow. Speeds above free flow saturate at 100.
pub fn compute_tps(inputs: &[TpsInput], free_flow_speed: f64) -> Result<f64, TrafficError> {
    compute_tps_raw(inputs, free_flow_speed).map(|tps| tps.min(100.0))
}

/// Volume and segment length for one detector-minute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmtInput {
    pub timestamp: Timestamp,
    pub volume: f64,
    pub length_miles: f64,
}

/// Σ volume · segment length over the observations inside `window`.
pub fn compute_vmt(rows: impl IntoIterator<Item = VmtInput>, window: &TimeWindow) -> f64 {
    rows.into_iter()
        .filter(|r| window.contains(r.timestamp))
        .map(|r| r.volume * r.length_miles)
        .sum()
}

/// Grams CO2e for `vmt` vehicle-miles at `factor` g/veh-mi.
pub fn estimate_emissions(vmt: f64, factor: f64) -> f64 {
    debug_assert!(vmt >= 0.0 && factor > 0.0);
    vmt * factor
}
