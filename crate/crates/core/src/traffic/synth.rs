//! Seeded synthetic loop-detector network.
//!
//! Each route is a chain of stations; a station is one cabinet and one
//! segment, holding up to three lane detectors in the order GP, HOV, GP.
//! Speeds follow a weekday diurnal pattern with raised-cosine dips centered
//! on 08:00 and 17:00 local time (shallower on weekends) plus seeded
//! uniform noise. Volumes follow a day/night profile with peak bumps.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, TimeZone, Timelike, Utc, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_tps, Cabinet, DailyTrafficStats, Dataset, Detector, Direction, LaneClass, LoopObservation,
    NetworkConfig, Segment, Timestamp, TpsInput, TrafficError, TrafficIndexRecord,
};

const DETECTORS_PER_STATION: usize = 3;
const AM_PEAK_HOUR: f64 = 8.0;
const PM_PEAK_HOUR: f64 = 17.0;
const PEAK_HALF_WIDTH_HOURS: f64 = 1.5;
const WEEKEND_DIP_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub routes: Vec<String>,
    pub detectors_per_route: usize,
    pub days: usize,
    pub minutes_step: u32,
    /// First local calendar day of data.
    pub start_date: NaiveDate,
    pub network: NetworkConfig,
}

impl SynthConfig {
    pub fn new(seed: u64, routes: &[&str], detectors_per_route: usize, days: usize) -> Self {
        SynthConfig {
            seed,
            routes: routes.iter().map(|r| r.to_string()).collect(),
            detectors_per_route,
            days,
            minutes_step: 1,
            start_date: NaiveDate::from_ymd_opt(2024, 4, 1).unwrap(),
            network: NetworkConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), TrafficError> {
        if self.routes.is_empty() {
            return Err(TrafficError::InvalidConfig("at least one route is required".into()));
        }
        if self.detectors_per_route == 0 || self.days == 0 || self.minutes_step == 0 {
            return Err(TrafficError::InvalidConfig(
                "detectors_per_route, days and minutes_step must be at least 1".into(),
            ));
        }
        let mut codes: Vec<String> = self.routes.iter().map(|r| route_code(r)).collect();
        if codes.iter().any(|c| c.is_empty()) {
            return Err(TrafficError::InvalidConfig("route labels need alphanumeric characters".into()));
        }
        codes.sort();
        codes.dedup();
        if codes.len() != self.routes.len() {
            return Err(TrafficError::InvalidConfig("route labels must be distinct".into()));
        }
        self.network.validate()
    }
}

fn route_code(route: &str) -> String {
    route.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase()
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

/// Raised-cosine bump of unit height centered on `center`.
fn dip(hour: f64, center: f64) -> f64 {
    let offset = hour - center;
    if offset.abs() < PEAK_HALF_WIDTH_HOURS {
        0.5 * (1.0 + (std::f64::consts::PI * offset / PEAK_HALF_WIDTH_HOURS).cos())
    } else {
        0.0
    }
}

struct DetectorModel {
    base_speed: f64,
    am_depth: f64,
    pm_depth: f64,
    base_volume: f64,
}

struct Clock {
    timestamp: Timestamp,
    local_time: String,
    hour: f64,
    weekend: bool,
}

pub fn generate_synthetic_network(config: &SynthConfig) -> Result<Dataset, TrafficError> {
    config.validate()?;
    let zone = config.network.zone()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let start_local = config.start_date.and_hms_opt(0, 0, 0).unwrap();
    let start_utc = zone
        .from_local_datetime(&start_local)
        .earliest()
        .ok_or_else(|| TrafficError::InvalidConfig("start date has no local midnight".into()))?
        .with_timezone(&Utc);
    let start = Timestamp::new(start_utc);
    let samples = config.days * 1440 / config.minutes_step as usize;
    let clocks: Vec<Clock> = (0..samples)
        .map(|i| {
            let timestamp = start.plus_minutes(i as i64 * i64::from(config.minutes_step));
            let local = timestamp.local(zone);
            Clock {
                timestamp,
                local_time: local.format(super::time::LOCAL_FORMAT).to_string(),
                hour: f64::from(local.hour()) + f64::from(local.minute()) / 60.0,
                weekend: matches!(local.weekday(), Weekday::Sat | Weekday::Sun),
            }
        })
        .collect();

    let mut detectors = Vec::new();
    let mut cabinets = Vec::new();
    let mut segments = Vec::new();
    let mut models = Vec::new();

    for (route_idx, route) in config.routes.iter().enumerate() {
        let code = route_code(route);
        let direction = [Direction::N, Direction::S, Direction::E, Direction::W][route_idx % 4];
        let north_south = matches!(direction, Direction::N | Direction::S);
        let base_lat = 47.45 + 0.08 * route_idx as f64;
        let base_lon = -122.32 + 0.06 * route_idx as f64;
        let mut milepost = round_to(rng.random_range(1.0..20.0), 2);
        let stations = config.detectors_per_route.div_ceil(DETECTORS_PER_STATION);
        for station in 0..stations {
            let length = round_to(rng.random_range(0.8..2.5), 2);
            let station_no = station + 1;
            let segment_id = format!("SEG-{code}-{station_no:02}");
            let cabinet_id = format!("CAB-{code}-{station_no:02}");
            let mid = round_to(milepost + length / 2.0, 2);
            let (lat, lon) = if north_south {
                (base_lat + 0.0145 * (mid - 1.0), base_lon)
            } else {
                (base_lat, base_lon + 0.0195 * (mid - 1.0))
            };
            cabinets.push(Cabinet {
                cabinet_id: cabinet_id.clone(),
                station_name: format!("{route} MP {mid:.2}"),
                district: "Northwest".to_string(),
                county: if mid < 12.0 { "King" } else { "Snohomish" }.to_string(),
                route: route.clone(),
                milepost: mid,
            });
            let first = station * DETECTORS_PER_STATION;
            let last = (first + DETECTORS_PER_STATION).min(config.detectors_per_route);
            let mut members = Vec::new();
            for (position, _) in (first..last).enumerate() {
                let lane_class = if position == 1 { LaneClass::Hov } else { LaneClass::GeneralPurpose };
                let detector_id = format!("{code}-S{station_no:02}-L{position}");
                let hov = lane_class == LaneClass::Hov;
                models.push(DetectorModel {
                    base_speed: if hov { rng.random_range(63.0..68.0) } else { rng.random_range(60.0..66.0) },
                    am_depth: rng.random_range(0.35..0.6) * if hov { 0.5 } else { 1.0 },
                    pm_depth: rng.random_range(0.4..0.65) * if hov { 0.5 } else { 1.0 },
                    base_volume: if hov { rng.random_range(6.0..10.0) } else { rng.random_range(18.0..26.0) },
                });
                detectors.push(Detector {
                    detector_id: detector_id.clone(),
                    unit_name: format!("{route} MP {mid:.2} {}{}", lane_class, position),
                    cabinet_id: cabinet_id.clone(),
                    route: route.clone(),
                    direction,
                    milepost: mid,
                    latitude: round_to(lat, 6),
                    longitude: round_to(lon, 6),
                    lane_class,
                    segment_id: segment_id.clone(),
                });
                members.push(detector_id);
            }
            segments.push(Segment {
                segment_id,
                route: route.clone(),
                direction,
                begin_milepost: milepost,
                end_milepost: round_to(milepost + length, 2),
                length_miles: length,
                member_detectors: members,
            });
            milepost = round_to(milepost + length, 2);
        }
    }

    // Generate in detector-id order so the minute table is sorted by
    // (detector_id, timestamp).
    let mut order: Vec<usize> = (0..detectors.len()).collect();
    order.sort_by(|a, b| detectors[*a].detector_id.cmp(&detectors[*b].detector_id));
    let mut observations = Vec::with_capacity(detectors.len() * samples);
    let mut offsets = BTreeMap::new();
    for &idx in &order {
        let detector = &detectors[idx];
        let model = &models[idx];
        offsets.insert(detector.detector_id.clone(), observations.len());
        for clock in &clocks {
            let scale = if clock.weekend { WEEKEND_DIP_SCALE } else { 1.0 };
            let congestion =
                scale * (model.am_depth * dip(clock.hour, AM_PEAK_HOUR) + model.pm_depth * dip(clock.hour, PM_PEAK_HOUR));
            let speed = (model.base_speed * (1.0 - congestion) + rng.random_range(-2.0..2.0)).clamp(3.0, 85.0);
            let speed = round_to(speed, 1);
            let daylight = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * (clock.hour - 3.0) / 24.0).cos());
            let profile = 0.15 + 0.85 * daylight + 0.3 * (dip(clock.hour, AM_PEAK_HOUR) + dip(clock.hour, PM_PEAK_HOUR));
            let weekend_volume = if clock.weekend { 0.8 } else { 1.0 };
            let volume = (model.base_volume * profile * weekend_volume + rng.random_range(-2.0..2.0)).round().max(1.0);
            let occupancy = round_to((volume * 20.0 / (speed * 88.0)).clamp(0.0, 1.0), 3);
            observations.push(LoopObservation {
                detector_id: detector.detector_id.clone(),
                timestamp: clock.timestamp,
                local_time: clock.local_time.clone(),
                speed,
                volume: volume as u32,
                occupancy,
            });
        }
    }
    detectors.sort_by(|a, b| a.detector_id.cmp(&b.detector_id));
    segments.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    cabinets.sort_by(|a, b| a.cabinet_id.cmp(&b.cabinet_id));

    let segment_index =
        build_segment_index(&segments, &detectors, &observations, &offsets, &clocks, &config.network)?;
    let daily_stats = build_daily_stats(&segments, &segment_index);

    Ok(Dataset {
        network: config.network.clone(),
        detectors,
        cabinets,
        segments,
        observations,
        segment_index,
        daily_stats,
    })
}

fn build_segment_index(
    segments: &[Segment],
    detectors: &[Detector],
    observations: &[LoopObservation],
    offsets: &BTreeMap<String, usize>,
    clocks: &[Clock],
    network: &NetworkConfig,
) -> Result<Vec<TrafficIndexRecord>, TrafficError> {
    let lane_of: BTreeMap<&str, LaneClass> =
        detectors.iter().map(|d| (d.detector_id.as_str(), d.lane_class)).collect();
    let mut records = Vec::new();
    for segment in segments {
        let by_lane: Vec<(LaneClass, Vec<usize>)> = LaneClass::ALL
            .iter()
            .map(|lane| {
                let starts = segment
                    .member_detectors
                    .iter()
                    .filter(|id| lane_of.get(id.as_str()) == Some(lane))
                    .map(|id| offsets[id])
                    .collect::<Vec<_>>();
                (*lane, starts)
            })
            .filter(|(_, starts)| !starts.is_empty())
            .collect();
        for (i, clock) in clocks.iter().enumerate() {
            for (lane, starts) in &by_lane {
                let members: Vec<&LoopObservation> = starts.iter().map(|s| &observations[s + i]).collect();
                let inputs: Vec<TpsInput> = members
                    .iter()
                    .map(|o| TpsInput::new(o.speed, f64::from(o.volume), segment.length_miles))
                    .collect();
                let tps = compute_tps(&inputs, network.free_flow_speed)?;
                let total_volume: u32 = members.iter().map(|o| o.volume).sum();
                let avg_speed = members.iter().map(|o| o.speed * f64::from(o.volume)).sum::<f64>()
                    / f64::from(total_volume);
                records.push(TrafficIndexRecord {
                    segment_id: segment.segment_id.clone(),
                    route: segment.route.clone(),
                    timestamp: clock.timestamp,
                    local_time: clock.local_time.clone(),
                    lane_class: *lane,
                    avg_speed,
                    total_volume,
                    tps,
                });
            }
        }
    }
    Ok(records)
}

fn build_daily_stats(segments: &[Segment], index: &[TrafficIndexRecord]) -> Vec<DailyTrafficStats> {
    struct Acc {
        n: usize,
        tps_sum: f64,
        tps_min: f64,
        tps_max: f64,
        speed_sum: f64,
        vmt: f64,
    }
    let lengths: BTreeMap<&str, f64> = segments.iter().map(|s| (s.segment_id.as_str(), s.length_miles)).collect();
    let mut groups: BTreeMap<(&str, &str, LaneClass), Acc> = BTreeMap::new();
    for r in index {
        let acc = groups.entry((r.segment_id.as_str(), &r.local_time[..10], r.lane_class)).or_insert(Acc {
            n: 0,
            tps_sum: 0.0,
            tps_min: f64::INFINITY,
            tps_max: f64::NEG_INFINITY,
            speed_sum: 0.0,
            vmt: 0.0,
        });
        acc.n += 1;
        acc.tps_sum += r.tps;
        acc.tps_min = acc.tps_min.min(r.tps);
        acc.tps_max = acc.tps_max.max(r.tps);
        acc.speed_sum += r.avg_speed;
        acc.vmt += f64::from(r.total_volume) * lengths[r.segment_id.as_str()];
    }
    groups
        .into_iter()
        .map(|((segment_id, date, lane_class), acc)| {
            let day_of_week = NaiveDate::parse_from_str(date, "%Y-%m-%d")
                .map(|d| weekday_name(d.weekday()))
                .unwrap_or("");
            DailyTrafficStats {
                segment_id: segment_id.to_string(),
                local_date: date.to_string(),
                day_of_week: day_of_week.to_string(),
                lane_class,
                avg_tps: acc.tps_sum / acc.n as f64,
                min_tps: acc.tps_min,
                max_tps: acc.tps_max,
                avg_speed: acc.speed_sum / acc.n as f64,
                vmt: acc.vmt,
            }
        })
        .collect()
}

fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}
