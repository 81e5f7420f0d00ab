//! Change-of-Value sensor logs: one `timestamp,value` CSV per sensor, plus a
//! sidecar mapping sensor ids to clusters and value kinds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, LocalResult, NaiveDate, NaiveDateTime, TimeZone, Timelike};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::CovError;
use crate::Timestamp;

pub const SLOTS_PER_DAY: usize = 96;
pub const SLOT_MINUTES: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Boolean,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorValue {
    Bool(bool),
    Float(f64),
}

impl SensorValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            SensorValue::Bool(_) => ValueKind::Boolean,
            SensorValue::Float(_) => ValueKind::Float,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            SensorValue::Bool(b) => f64::from(u8::from(b)),
            SensorValue::Float(v) => v,
        }
    }
}

impl fmt::Display for SensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorValue::Bool(b) => write!(f, "{b}"),
            SensorValue::Float(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub cluster: String,
    pub kind: ValueKind,
    /// CSV file name relative to the log directory.
    pub file: String,
}

/// Sensor id to cluster/kind mapping.
///
/// Text form, one sensor per line, `#` starts a comment:
///
/// ```text
/// door-101 = door, boolean
/// temp-101 = temperature, float, room101.csv
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub sensors: BTreeMap<String, SensorSpec>,
}

impl SensorMeta {
    pub fn parse(text: &str) -> Result<Self, CovError> {
        let mut sensors = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || CovError::Meta {
                line: idx + 1,
                text: raw.to_string(),
            };
            let (id, rest) = line.split_once('=').ok_or_else(bad)?;
            let id = id.trim();
            let fields: Vec<&str> = rest.split(',').map(str::trim).collect();
            if id.is_empty() || fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() {
                return Err(bad());
            }
            let kind = match fields[1].to_ascii_lowercase().as_str() {
                "boolean" | "bool" | "binary" => ValueKind::Boolean,
                "float" | "analog" => ValueKind::Float,
                _ => return Err(bad()),
            };
            let file = fields
                .get(2)
                .map_or_else(|| format!("{id}.csv"), |f| f.to_string());
            sensors.insert(
                id.to_string(),
                SensorSpec {
                    sensor_id: id.to_string(),
                    cluster: fields[0].to_string(),
                    kind,
                    file,
                },
            );
        }
        Ok(Self { sensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CovError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, sensor_id: &str) -> Option<&SensorSpec> {
        self.sensors.get(sensor_id)
    }

    /// Distinct cluster names, sorted.
    pub fn clusters(&self) -> Vec<String> {
        let mut c: Vec<String> = self.sensors.values().map(|s| s.cluster.clone()).collect();
        c.sort();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovEvent {
    pub sensor_id: String,
    pub cluster: String,
    pub timestamp: Timestamp,
    pub value: SensorValue,
    /// Repeated by extrapolation rather than reported by the sensor.
    #[serde(default)]
    pub filled: bool,
}

/// Parse an ISO-8601 timestamp. Values without an offset are local to `tz`.
pub fn parse_iso8601(text: &str, tz: Tz) -> Option<Timestamp> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(to_timestamp(dt));
    }
    let naive = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())?;
    local_to_timestamp(naive, tz)
}

fn to_timestamp<T: TimeZone>(dt: DateTime<T>) -> Timestamp {
    Timestamp::from_parts(dt.timestamp(), dt.timestamp_subsec_nanos())
}

/// Local wall-clock time to an instant; ambiguous times take the earlier
/// instant, times skipped by a DST jump are rejected.
pub fn local_to_timestamp(naive: NaiveDateTime, tz: Tz) -> Option<Timestamp> {
    match tz.from_local_datetime(&naive) {
        LocalResult::Single(dt) => Some(to_timestamp(dt)),
        LocalResult::Ambiguous(a, _) => Some(to_timestamp(a)),
        LocalResult::None => None,
    }
}

pub fn local_datetime(ts: Timestamp, tz: Tz) -> NaiveDateTime {
    tz.timestamp_opt(ts.secs(), ts.subsec_nanos())
        .single()
        .expect("valid instant")
        .naive_local()
}

/// First instant of `day` in `tz`.
pub fn day_start(day: NaiveDate, tz: Tz) -> Timestamp {
    let mut t = day.and_hms_opt(0, 0, 0).expect("midnight");
    // Zones that skip midnight start the day at the first valid minute.
    loop {
        if let Some(ts) = local_to_timestamp(t, tz) {
            return ts;
        }
        t += chrono::Duration::minutes(1);
    }
}

/// 15-minute slot index of a local wall-clock time.
pub fn slot_of(local: NaiveDateTime) -> usize {
    (local.hour() * 60 + local.minute()) as usize / SLOT_MINUTES as usize
}

pub fn parse_value(text: &str, kind: ValueKind) -> Option<SensorValue> {
    let t = text.trim();
    match kind {
        ValueKind::Boolean => match t.to_ascii_lowercase().as_str() {
            "true" | "1" | "on" | "active" => Some(SensorValue::Bool(true)),
            "false" | "0" | "off" | "inactive" => Some(SensorValue::Bool(false)),
            _ => None,
        },
        ValueKind::Float => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(SensorValue::Float),
    }
}

/// Read one sensor's CSV (`timestamp,value` header, ISO-8601 timestamps).
pub fn read_cov_csv(
    path: impl AsRef<Path>,
    sensor: &SensorSpec,
    tz: Tz,
) -> Result<Vec<CovEvent>, CovError> {
    read_cov(fs::File::open(path)?, sensor, tz)
}

pub fn read_cov<R: Read>(input: R, sensor: &SensorSpec, tz: Tz) -> Result<Vec<CovEvent>, CovError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| CovError::Schema(format!("missing column `{name}`")))
    };
    let ts_col = col("timestamp")?;
    let value_col = col("value")?;
    let mut events = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let ts_text = record.get(ts_col).unwrap_or("");
        let value_text = record.get(value_col).unwrap_or("");
        let timestamp = parse_iso8601(ts_text, tz).ok_or_else(|| CovError::Value {
            row,
            text: ts_text.to_string(),
        })?;
        let value = parse_value(value_text, sensor.kind).ok_or_else(|| CovError::Value {
            row,
            text: value_text.to_string(),
        })?;
        events.push(CovEvent {
            sensor_id: sensor.sensor_id.clone(),
            cluster: sensor.cluster.clone(),
            timestamp,
            value,
            filled: false,
        });
    }
    Ok(events)
}

/// Read every sensor listed in `meta` from `dir`; missing files are skipped.
pub fn read_cov_dir(
    dir: impl AsRef<Path>,
    meta: &SensorMeta,
    tz: Tz,
) -> Result<Vec<CovEvent>, CovError> {
    let dir = dir.as_ref();
    let mut all = Vec::new();
    for spec in meta.sensors.values() {
        let path = dir.join(&spec.file);
        if !path.exists() {
            continue;
        }
        let mut events = read_cov_csv(&path, spec, tz)?;
        events.sort_by_key(|e| e.timestamp);
        all.extend(events);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub slot: u8,
    pub timestamp: Timestamp,
    /// `None` when no value is known yet.
    pub value: Option<SensorValue>,
    /// True for points repeating an earlier value rather than a reported event.
    pub filled: bool,
}

/// One sensor-day with at least one point in each 15-minute slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub sensor_id: String,
    pub day: NaiveDate,
    pub points: Vec<SeriesPoint>,
    /// Set when leading slots precede any event and no seed was given.
    pub no_prior_value: bool,
}

impl IntervalSeries {
    /// Value held at the end of each slot.
    pub fn slot_values(&self) -> Vec<Option<SensorValue>> {
        let mut out = vec![None; SLOTS_PER_DAY];
        for p in &self.points {
            out[usize::from(p.slot)] = p.value;
        }
        out
    }

    pub fn unknown_slots(&self) -> usize {
        self.slot_values().iter().filter(|v| v.is_none()).count()
    }

    /// Known points as events, for re-ingestion or scoring.
    pub fn to_events(&self, cluster: &str) -> Vec<CovEvent> {
        self.points
            .iter()
            .filter_map(|p| {
                p.value.map(|value| CovEvent {
                    sensor_id: self.sensor_id.clone(),
                    cluster: cluster.to_string(),
                    timestamp: p.timestamp,
                    value,
                    filled: p.filled,
                })
            })
            .collect()
    }
}

/// Fill every 15-minute slot of `day` by repeating the last known value.
///
/// Events before the day update the carried value; events after it are
/// ignored. Slots before the first known value stay unknown.
pub fn extrapolate_15min(
    sensor_id: &str,
    events: &[CovEvent],
    day: NaiveDate,
    seed: Option<SensorValue>,
    tz: Tz,
) -> IntervalSeries {
    let start = day_start(day, tz);
    let end = day_start(day.succ_opt().expect("representable date"), tz);
    let mut carried = seed;
    let mut by_slot: Vec<Vec<(Timestamp, SensorValue)>> = vec![Vec::new(); SLOTS_PER_DAY];
    let mut sorted: Vec<&CovEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.timestamp);
    for e in sorted {
        if e.timestamp < start {
            carried = Some(e.value);
        } else if e.timestamp < end {
            by_slot[slot_of(local_datetime(e.timestamp, tz))].push((e.timestamp, e.value));
        }
    }

    let mut points = Vec::with_capacity(SLOTS_PER_DAY);
    let mut no_prior_value = false;
    for (slot, raw) in by_slot.into_iter().enumerate() {
        if raw.is_empty() {
            if carried.is_none() {
                no_prior_value = true;
            }
            points.push(SeriesPoint {
                slot: slot as u8,
                timestamp: slot_start(day, slot, tz),
                value: carried,
                filled: true,
            });
        } else {
            for (timestamp, value) in raw {
                carried = Some(value);
                points.push(SeriesPoint {
                    slot: slot as u8,
                    timestamp,
                    value: Some(value),
                    filled: false,
                });
            }
        }
    }
    IntervalSeries {
        sensor_id: sensor_id.to_string(),
        day,
        points,
        no_prior_value,
    }
}

fn slot_start(day: NaiveDate, slot: usize, tz: Tz) -> Timestamp {
    let minutes = (slot as u32) * SLOT_MINUTES;
    let naive = day
        .and_hms_opt(minutes / 60, minutes % 60, 0)
        .expect("valid slot");
    local_to_timestamp(naive, tz).unwrap_or_else(|| {
        // Slot start falls in a DST gap; use the instant an hour later.
        local_to_timestamp(naive + chrono::Duration::hours(1), tz).expect("valid after gap")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ValueKind) -> SensorSpec {
        SensorSpec {
            sensor_id: "s1".into(),
            cluster: "door".into(),
            kind,
            file: "s1.csv".into(),
        }
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 3, 2).unwrap()
    }

    fn at(h: u32, m: u32, v: SensorValue) -> CovEvent {
        let naive = day().and_hms_opt(h, m, 0).unwrap();
        CovEvent {
            sensor_id: "s1".into(),
            cluster: "temperature".into(),
            timestamp: local_to_timestamp(naive, Tz::UTC).unwrap(),
            value: v,
            filled: false,
        }
    }

    #[test]
    fn boolean_row() {
        let csv = "timestamp,value\n2015-03-02T08:15:00,true\n";
        let ev = read_cov(csv.as_bytes(), &spec(ValueKind::Boolean), Tz::UTC).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].value, SensorValue::Bool(true));
        assert_eq!(ev[0].timestamp, Timestamp::from_parts(1_425_284_100, 0));
    }

    #[test]
    fn float_row() {
        let csv = "timestamp,value\n2015-03-02T08:15:00,21.4\n";
        let ev = read_cov(csv.as_bytes(), &spec(ValueKind::Float), Tz::UTC).unwrap();
        assert_eq!(ev[0].value, SensorValue::Float(21.4));
    }

    #[test]
    fn invalid_boolean_reports_row() {
        let csv = "timestamp,value\n2015-03-02T08:15:00,maybe\n";
        let err = read_cov(csv.as_bytes(), &spec(ValueKind::Boolean), Tz::UTC).unwrap_err();
        assert!(matches!(err, CovError::Value { row: 1, ref text } if text == "maybe"));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "time,value\n2015-03-02T08:15:00,1\n";
        let err = read_cov(csv.as_bytes(), &spec(ValueKind::Boolean), Tz::UTC).unwrap_err();
        assert!(matches!(err, CovError::Schema(_)));
    }

    #[test]
    fn offsets_and_local_zone() {
        let berlin: Tz = "Europe/Berlin".parse().unwrap();
        let a = parse_iso8601("2015-03-02T09:15:00", berlin).unwrap();
        let b = parse_iso8601("2015-03-02T08:15:00Z", berlin).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn meta_parses_and_defaults_file_name() {
        let meta = SensorMeta::parse(
            "# comment\ndoor-1 = door, boolean\n\ntemp-1 = temperature, float, t1.csv # trailing\n",
        )
        .unwrap();
        assert_eq!(meta.get("door-1").unwrap().file, "door-1.csv");
        assert_eq!(meta.get("temp-1").unwrap().kind, ValueKind::Float);
        assert_eq!(meta.clusters(), vec!["door", "temperature"]);
        assert!(SensorMeta::parse("x = door").is_err());
        assert!(SensorMeta::parse("x = door, complex").is_err());
    }

    #[test]
    fn repeats_previous_value() {
        let events = [
            at(0, 7, SensorValue::Float(21.5)),
            at(1, 40, SensorValue::Float(21.7)),
        ];
        let s = extrapolate_15min("s1", &events, day(), None, Tz::UTC);
        let v = s.slot_values();
        assert_eq!(v.len(), 96);
        // 01:40 falls in slot 6 (01:30-01:45).
        for (slot, value) in v.iter().enumerate() {
            let expected = if slot < 6 { 21.5 } else { 21.7 };
            assert_eq!(*value, Some(SensorValue::Float(expected)), "slot {slot}");
        }
        assert!(!s.no_prior_value);
        assert_eq!(s.points.iter().filter(|p| !p.filled).count(), 2);
    }

    #[test]
    fn seed_only() {
        let s = extrapolate_15min("s1", &[], day(), Some(SensorValue::Bool(false)), Tz::UTC);
        assert!(s
            .slot_values()
            .iter()
            .all(|v| *v == Some(SensorValue::Bool(false))));
        assert!(!s.no_prior_value);
    }

    #[test]
    fn no_events_no_seed_is_unknown() {
        let s = extrapolate_15min("s1", &[], day(), None, Tz::UTC);
        assert_eq!(s.unknown_slots(), 96);
        assert!(s.no_prior_value);
    }

    #[test]
    fn latest_raw_value_wins_within_slot() {
        let events = [
            at(3, 1, SensorValue::Bool(true)),
            at(3, 14, SensorValue::Bool(false)),
        ];
        let s = extrapolate_15min("s1", &events, day(), Some(SensorValue::Bool(true)), Tz::UTC);
        assert_eq!(s.slot_values()[12], Some(SensorValue::Bool(false)));
        assert_eq!(s.points.iter().filter(|p| p.slot == 12).count(), 2);
    }

    #[test]
    fn dst_day_still_has_96_slots() {
        let berlin: Tz = "Europe/Berlin".parse().unwrap();
        let d = NaiveDate::from_ymd_opt(2015, 3, 29).unwrap();
        let s = extrapolate_15min("s1", &[], d, Some(SensorValue::Float(1.0)), berlin);
        assert_eq!(s.slot_values().len(), 96);
        assert_eq!(s.unknown_slots(), 0);
    }
}
