use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use chrono_tz::Tz;

use crate::capture::cov::{local_datetime, CovEvent, SensorValue};
use crate::Timestamp;

fn local_nanos(t: NaiveDateTime) -> i64 {
    t.and_utc().timestamp_nanos_opt().unwrap_or(i64::MAX)
}

/// One stored event with its local wall-clock position.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub timestamp: Timestamp,
    pub local: NaiveDateTime,
    pub value: SensorValue,
    pub filled: bool,
    /// Boolean transition from the previous value, or any reported float event.
    pub changed: bool,
}

impl HistoryPoint {
    pub fn date(&self) -> NaiveDate {
        self.local.date()
    }

    pub fn hour(&self) -> u32 {
        self.local.hour()
    }

    fn local_nanos(&self) -> i64 {
        local_nanos(self.local)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SensorSeries {
    pub cluster: String,
    /// Ordered by timestamp.
    pub points: Vec<HistoryPoint>,
    /// Indices into `points`, ordered by local wall-clock time.
    by_local: Vec<usize>,
}

impl SensorSeries {
    /// Points whose local time lies in `[from, to)`.
    pub fn local_range(
        &self,
        from: NaiveDateTime,
        to: NaiveDateTime,
    ) -> impl Iterator<Item = &HistoryPoint> {
        let (from, to) = (local_nanos(from), local_nanos(to));
        let lo = self
            .by_local
            .partition_point(|&i| self.points[i].local_nanos() < from);
        let hi = self
            .by_local
            .partition_point(|&i| self.points[i].local_nanos() < to);
        self.by_local[lo..hi.max(lo)]
            .iter()
            .map(|&i| &self.points[i])
    }
}

/// All events per sensor, for window queries on local time of day.
#[derive(Debug, Clone)]
pub struct EventHistory {
    tz: Tz,
    sensors: BTreeMap<String, SensorSeries>,
}

impl EventHistory {
    pub fn new(events: impl IntoIterator<Item = CovEvent>, tz: Tz) -> Self {
        let mut grouped: BTreeMap<String, Vec<CovEvent>> = BTreeMap::new();
        for e in events {
            grouped.entry(e.sensor_id.clone()).or_default().push(e);
        }
        let sensors = grouped
            .into_iter()
            .map(|(id, mut events)| {
                events.sort_by_key(|e| e.timestamp);
                let cluster = events[0].cluster.clone();
                let mut prev: Option<SensorValue> = None;
                let points: Vec<HistoryPoint> = events
                    .into_iter()
                    .map(|e| {
                        let changed = match e.value {
                            SensorValue::Bool(b) => {
                                matches!(prev, Some(SensorValue::Bool(p)) if p != b)
                            }
                            SensorValue::Float(_) => !e.filled,
                        };
                        prev = Some(e.value);
                        HistoryPoint {
                            timestamp: e.timestamp,
                            local: local_datetime(e.timestamp, tz),
                            value: e.value,
                            filled: e.filled,
                            changed,
                        }
                    })
                    .collect();
                let mut by_local: Vec<usize> = (0..points.len()).collect();
                by_local.sort_by_key(|&i| (points[i].local_nanos(), i));
                (
                    id,
                    SensorSeries {
                        cluster,
                        points,
                        by_local,
                    },
                )
            })
            .collect();
        Self { tz, sensors }
    }

    pub fn tz(&self) -> Tz {
        self.tz
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSeries> {
        self.sensors.get(id)
    }

    pub fn sensors(&self) -> impl Iterator<Item = (&str, &SensorSeries)> {
        self.sensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn clusters(&self) -> Vec<String> {
        let mut c: Vec<String> = self.sensors.values().map(|s| s.cluster.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Values of `sensor` at `local` ± `window` on each of the `days` days
    /// before `local`'s date, restricted to those days.
    pub fn matching_window(
        &self,
        sensor: &str,
        local: NaiveDateTime,
        window: chrono::Duration,
        days: u32,
    ) -> Vec<SensorValue> {
        let Some(series) = self.sensors.get(sensor) else {
            return Vec::new();
        };
        let today = local.date();
        let Some(first_day) = today.checked_sub_days(chrono::Days::new(u64::from(days))) else {
            return Vec::new();
        };
        let earliest = first_day.and_hms_opt(0, 0, 0).expect("midnight");
        let latest = today.and_hms_opt(0, 0, 0).expect("midnight");
        let mut out = Vec::new();
        for k in 1..=days {
            let Some(centre) = local.checked_sub_days(chrono::Days::new(u64::from(k))) else {
                continue;
            };
            let from = (centre - window).max(earliest);
            let to = (centre + window + chrono::Duration::nanoseconds(1)).min(latest);
            if from < to {
                out.extend(series.local_range(from, to).map(|p| p.value));
            }
        }
        out
    }
}
