//! Per-day weighted tree over sensor events.
//!
//! The root holds one cluster per sensor type; each cluster has 24 hour
//! children. An hour's weight is the larger of its most surprising event and
//! the deviation of its change count from the same hour on previous days.
//! Boolean surprisal is in bits, float surprisal in standard deviations.

mod history;

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate, NaiveDateTime};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use history::{EventHistory, HistoryPoint, SensorSeries};

use crate::capture::cov::{extrapolate_15min, CovEvent, SensorMeta, SensorValue};
use crate::Timestamp;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Half-width of the time-of-day matching window.
    pub window_minutes: i64,
    /// Number of prior days searched.
    pub history_days: u32,
    /// Lower bound on the historical standard deviation of float values.
    pub sigma_floor: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            window_minutes: 60,
            history_days: 7,
            sigma_floor: 0.1,
        }
    }
}

impl ScoringConfig {
    fn window(&self) -> chrono::Duration {
        chrono::Duration::minutes(self.window_minutes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("probability {0} is outside (0, 1]")]
pub struct DomainError(pub f64);

/// Laplace-smoothed frequency of a value seen `k` times in `n` samples.
pub fn laplace(k: usize, n: usize) -> f64 {
    (k as f64 + 1.0) / (n as f64 + 2.0)
}

pub fn info_content(p: f64) -> Result<f64, DomainError> {
    if p > 0.0 && p <= 1.0 {
        Ok(-p.log2())
    } else {
        Err(DomainError(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub samples: usize,
    pub low_confidence: bool,
}

/// Probability of boolean `v` from the matching window; 0.5 without history.
pub fn p_boolean(
    history: &EventHistory,
    sensor: &str,
    local: NaiveDateTime,
    v: bool,
    cfg: &ScoringConfig,
) -> Estimate {
    let samples = history.matching_window(sensor, local, cfg.window(), cfg.history_days);
    let n = samples.len();
    let k = samples
        .iter()
        .filter(|s| matches!(s, SensorValue::Bool(b) if *b == v))
        .count();
    let value = if n == 0 { 0.5 } else { laplace(k, n) };
    Estimate {
        value,
        samples: n,
        low_confidence: n == 0,
    }
}

/// `|v - mean| / max(sd, floor)` over the matching window; 0 with fewer than two samples.
pub fn float_surprisal(
    history: &EventHistory,
    sensor: &str,
    local: NaiveDateTime,
    v: f64,
    cfg: &ScoringConfig,
) -> Estimate {
    let samples: Vec<f64> = history
        .matching_window(sensor, local, cfg.window(), cfg.history_days)
        .iter()
        .map(SensorValue::as_f64)
        .collect();
    let n = samples.len();
    if n < 2 {
        return Estimate {
            value: 0.0,
            samples: n,
            low_confidence: true,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Estimate {
        value: (v - mean).abs() / var.sqrt().max(cfg.sigma_floor),
        samples: n,
        low_confidence: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Bits,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub timestamp: Timestamp,
    pub sensor_id: String,
    pub value: SensorValue,
    pub filled: bool,
    /// I(e). Zero when the history gives no basis for comparison.
    pub surprisal: f64,
    pub unit: Unit,
    pub low_confidence: bool,
}

/// Surprisal of one event against its history.
pub fn score_event(
    history: &EventHistory,
    sensor: &str,
    point: &HistoryPoint,
    cfg: &ScoringConfig,
) -> EventScore {
    let (surprisal, unit, low_confidence) = match point.value {
        SensorValue::Bool(v) => {
            let p = p_boolean(history, sensor, point.local, v, cfg);
            let bits = if p.low_confidence {
                0.0
            } else {
                info_content(p.value).expect("smoothed probability")
            };
            (bits, Unit::Bits, p.low_confidence)
        }
        SensorValue::Float(v) => {
            let z = float_surprisal(history, sensor, point.local, v, cfg);
            (z.value, Unit::Z, z.low_confidence)
        }
    };
    EventScore {
        timestamp: point.timestamp,
        sensor_id: sensor.to_string(),
        value: point.value,
        filled: point.filled,
        surprisal,
        unit,
        low_confidence,
    }
}

/// `|count - mean| / max(sd, 1)` over the historical counts; 0 without history.
pub fn change_deviation(count: u64, historical: &[u64]) -> f64 {
    let n = historical.len();
    if n == 0 {
        return 0.0;
    }
    let mean = historical.iter().sum::<u64>() as f64 / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (historical
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    };
    (count as f64 - mean).abs() / sd.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourNode {
    pub hour: u8,
    /// I(h): maximum event surprisal.
    #[serde(rename = "I")]
    pub info: f64,
    /// N(h): deviation of the change count.
    #[serde(rename = "N")]
    pub change_dev: f64,
    /// W(h) = max(I(h), N(h)).
    #[serde(rename = "W")]
    pub weight: f64,
    pub changes: u64,
    pub low_confidence: bool,
    pub events: Vec<EventScore>,
}

pub fn hour_weight(
    hour: u8,
    events: Vec<EventScore>,
    changes: u64,
    historical_changes: &[u64],
) -> HourNode {
    let info = events.iter().map(|e| e.surprisal).fold(0.0, f64::max);
    let change_dev = change_deviation(changes, historical_changes);
    let low_confidence = historical_changes.is_empty() || events.iter().any(|e| e.low_confidence);
    HourNode {
        hour,
        info,
        change_dev,
        weight: info.max(change_dev),
        changes,
        low_confidence,
        events,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub cluster: String,
    /// W(c): mean of the 24 hour weights.
    pub weight: f64,
    pub hours: Vec<HourNode>,
}

impl ClusterNode {
    pub fn from_hours(cluster: String, hours: Vec<HourNode>) -> Self {
        debug_assert_eq!(hours.len(), HOURS_PER_DAY);
        let weight = hours.iter().map(|h| h.weight).sum::<f64>() / HOURS_PER_DAY as f64;
        Self {
            cluster,
            weight,
            hours,
        }
    }

    /// Hour with the largest weight; the earliest on ties.
    pub fn argmax(&self) -> u8 {
        let mut best = &self.hours[0];
        for h in &self.hours[1..] {
            if h.weight > best.weight {
                best = h;
            }
        }
        best.hour
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDayTree {
    pub day: NaiveDate,
    pub clusters: Vec<ClusterNode>,
    /// Largest hour weight of the day, for display normalization.
    pub display_max: f64,
}

impl WeightedDayTree {
    pub fn cluster(&self, name: &str) -> Option<&ClusterNode> {
        self.clusters.iter().find(|c| c.cluster == name)
    }

    pub fn event_count(&self) -> usize {
        self.clusters
            .iter()
            .flat_map(|c| &c.hours)
            .map(|h| h.events.len())
            .sum()
    }
}

/// Score `day` from the events in `history`, which may also contain later days.
///
/// Every cluster in `clusters` gets a node, as does any cluster with events
/// on the day.
pub fn build_weighted_tree(
    day: NaiveDate,
    clusters: &[String],
    history: &EventHistory,
    cfg: &ScoringConfig,
) -> WeightedDayTree {
    let mut hours: BTreeMap<String, Vec<(Vec<EventScore>, u64)>> = clusters
        .iter()
        .map(|c| (c.clone(), vec![(Vec::new(), 0); HOURS_PER_DAY]))
        .collect();
    // Historical change counts per cluster, per prior day with data, per hour.
    let mut past: BTreeMap<String, BTreeMap<NaiveDate, [u64; HOURS_PER_DAY]>> = BTreeMap::new();
    let first_day = day
        .checked_sub_days(Days::new(u64::from(cfg.history_days)))
        .unwrap_or(NaiveDate::MIN);

    for (sensor, series) in history.sensors() {
        for point in &series.points {
            let date = point.date();
            if date == day {
                let slot = &mut hours
                    .entry(series.cluster.clone())
                    .or_insert_with(|| vec![(Vec::new(), 0); HOURS_PER_DAY])
                    [point.hour() as usize];
                slot.0.push(score_event(history, sensor, point, cfg));
                slot.1 += u64::from(point.changed);
            } else if date >= first_day && date < day {
                let counts = past
                    .entry(series.cluster.clone())
                    .or_default()
                    .entry(date)
                    .or_insert([0; HOURS_PER_DAY]);
                counts[point.hour() as usize] += u64::from(point.changed);
            }
        }
    }

    let clusters: Vec<ClusterNode> = hours
        .into_iter()
        .map(|(cluster, slots)| {
            let days = past.get(&cluster);
            let nodes = slots
                .into_iter()
                .enumerate()
                .map(|(h, (mut events, changes))| {
                    events.sort_by(|a, b| {
                        (a.timestamp, &a.sensor_id).cmp(&(b.timestamp, &b.sensor_id))
                    });
                    let historical: Vec<u64> = days
                        .map(|d| d.values().map(|c| c[h]).collect())
                        .unwrap_or_default();
                    hour_weight(h as u8, events, changes, &historical)
                })
                .collect();
            ClusterNode::from_hours(cluster, nodes)
        })
        .collect();
    let display_max = clusters
        .iter()
        .flat_map(|c| &c.hours)
        .map(|h| h.weight)
        .fold(0.0, f64::max);
    WeightedDayTree {
        day,
        clusters,
        display_max,
    }
}

/// Each sensor's events at 15-minute resolution over `day` and the
/// `cfg.history_days` days before it.
pub fn extrapolate_window(
    meta: &SensorMeta,
    events: &[CovEvent],
    day: NaiveDate,
    cfg: &ScoringConfig,
    tz: Tz,
) -> Vec<CovEvent> {
    let mut by_sensor: BTreeMap<&str, Vec<CovEvent>> = BTreeMap::new();
    for e in events {
        by_sensor
            .entry(e.sensor_id.as_str())
            .or_default()
            .push(e.clone());
    }
    let mut out = Vec::new();
    for (sensor, raw) in &by_sensor {
        let cluster = meta
            .get(sensor)
            .map_or_else(|| raw[0].cluster.clone(), |s| s.cluster.clone());
        for k in (0..=cfg.history_days).rev() {
            let Some(d) = day.checked_sub_days(Days::new(u64::from(k))) else {
                continue;
            };
            out.extend(extrapolate_15min(sensor, raw, d, None, tz).to_events(&cluster));
        }
    }
    out
}

/// Extrapolate the raw events, then build the tree for `day`.
pub fn score_day(
    meta: &SensorMeta,
    events: &[CovEvent],
    day: NaiveDate,
    cfg: &ScoringConfig,
    tz: Tz,
) -> WeightedDayTree {
    let series = extrapolate_window(meta, events, day, cfg, tz);
    build_weighted_tree(day, &meta.clusters(), &EventHistory::new(series, tz), cfg)
}
