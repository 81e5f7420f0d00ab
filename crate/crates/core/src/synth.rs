//! Seeded synthetic traffic and sensor data.
//!
//! Used by tests, benchmarks and the demo commands. All generators are
//! deterministic for a given seed.

use std::net::Ipv4Addr;

use chrono::{NaiveDate, NaiveDateTime};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::capture::cov::{
    local_to_timestamp, CovEvent, SensorMeta, SensorSpec, SensorValue, ValueKind,
};
use crate::codec::{BacnetAddress, BacnetIpAddress, FrameBuilder, BACNET_IP_PORT};
use crate::flow::Pattern;
use crate::Timestamp;

/// Network number of the field bus behind the routers.
pub const FIELD_NETWORK: u16 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapModel {
    /// Gaussian jitter around a fixed period, truncated at zero.
    Normal {
        tau: f64,
        sigma: f64,
    },
    /// Gamma with mean `tau` and standard deviation `sigma`.
    Gamma {
        tau: f64,
        sigma: f64,
    },
    Exponential {
        lambda: f64,
    },
}

impl GapModel {
    pub fn sample_n(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        match *self {
            GapModel::Normal { tau, sigma } => {
                let d = Normal::new(tau, sigma).expect("finite normal parameters");
                (0..n).map(|_| d.sample(rng).max(0.0)).collect()
            }
            GapModel::Gamma { tau, sigma } => {
                let shape = (tau / sigma).powi(2);
                let d = Gamma::new(shape, sigma * sigma / tau).expect("positive gamma parameters");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            GapModel::Exponential { lambda } => {
                let d = rand_distr::Exp::new(lambda).expect("positive rate");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

/// A synthetic flow between two field devices.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    /// Two-octet field-bus MAC.
    pub src: [u8; 2],
    pub dst: [u8; 2],
    pub pdu_type: u8,
    pub tau: f64,
    pub sigma: f64,
    pub pattern: Pattern,
}

impl FlowSpec {
    pub fn model(&self) -> GapModel {
        match self.pattern {
            Pattern::Periodic => GapModel::Normal {
                tau: self.tau,
                sigma: self.sigma,
            },
            _ => GapModel::Gamma {
                tau: self.tau,
                sigma: self.sigma,
            },
        }
    }

    pub fn src_address(&self) -> BacnetAddress {
        BacnetAddress::from_mac(Some(FIELD_NETWORK), &self.src)
    }

    pub fn dst_address(&self) -> BacnetAddress {
        BacnetAddress::from_mac(Some(FIELD_NETWORK), &self.dst)
    }
}

/// The five most frequent flows of the reference network.
pub fn table1_flows() -> Vec<FlowSpec> {
    const A: [u8; 2] = [0x73, 0xc3];
    const B: [u8; 2] = [0x5c, 0xce];
    const C: [u8; 2] = [0xc1, 0xeb];
    const D: [u8; 2] = [0x5f, 0x44];
    let row = |src, dst, pdu_type, tau, sigma, pattern| FlowSpec {
        src,
        dst,
        pdu_type,
        tau,
        sigma,
        pattern,
    };
    vec![
        row(A, B, 0x0, 0.96743, 1.75864, Pattern::Sporadic),
        row(B, A, 0x3, 1.02827, 1.88999, Pattern::Sporadic),
        row(A, C, 0x0, 1.48328, 2.93323, Pattern::Sporadic),
        row(C, A, 0x3, 1.48876, 2.97395, Pattern::Sporadic),
        row(A, D, 0x3, 60.9053, 0.07921, Pattern::Periodic),
    ]
}

/// Router-forwarded NPDU with source and destination on the field network.
pub fn routed_bvll(src: [u8; 2], dst: [u8; 2], pdu_type: u8, invoke_id: u8) -> Vec<u8> {
    let net = FIELD_NETWORK.to_be_bytes();
    let mut b = vec![0x81, 0x0A, 0x00, 0x00, 0x01, 0x28];
    b.extend_from_slice(&[net[0], net[1], 2, dst[0], dst[1]]);
    b.extend_from_slice(&[net[0], net[1], 2, src[0], src[1]]);
    b.push(0xFF);
    match pdu_type {
        // ReadProperty request for present-value of analog-input 1.
        0x0 => b.extend_from_slice(&[
            0x00, 0x05, invoke_id, 0x0C, 0x0C, 0x00, 0x00, 0x00, 0x01, 0x19, 0x55,
        ]),
        // ReadProperty ComplexACK with a REAL value.
        0x3 => b.extend_from_slice(&[
            0x30, invoke_id, 0x0C, 0x0C, 0x00, 0x00, 0x00, 0x01, 0x19, 0x55, 0x3E, 0x44, 0x41,
            0xA8, 0x00, 0x00, 0x3F,
        ]),
        t => b.extend_from_slice(&[t << 4, invoke_id]),
    }
    let len = b.len() as u16;
    b[2..4].copy_from_slice(&len.to_be_bytes());
    b
}

fn router_frames() -> FrameBuilder {
    FrameBuilder::new(
        BacnetIpAddress::new(Ipv4Addr::new(192, 168, 10, 1), BACNET_IP_PORT),
        BacnetIpAddress::new(Ipv4Addr::new(192, 168, 10, 2), BACNET_IP_PORT),
    )
}

/// A timestamped Ethernet frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFrame {
    pub timestamp: Timestamp,
    pub frame: Vec<u8>,
}

/// Packet times of one flow: `n` gaps drawn from `model` after `start`.
pub fn flow_times(
    model: GapModel,
    n: usize,
    start: Timestamp,
    rng: &mut impl Rng,
) -> Vec<Timestamp> {
    let mut t = start.as_secs_f64();
    let mut out = Vec::with_capacity(n + 1);
    out.push(start);
    for g in model.sample_n(n, rng) {
        t += g;
        out.push(Timestamp::from_secs_f64(t));
    }
    out
}

/// Time-ordered frames for `flows`, `gaps[i]` inter-arrivals for flow `i`.
pub fn flow_stream(
    flows: &[FlowSpec],
    gaps: &[usize],
    start: Timestamp,
    seed: u64,
) -> Vec<SyntheticFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let builder = router_frames();
    let mut out = Vec::new();
    for (spec, &n) in flows.iter().zip(gaps) {
        for (i, t) in flow_times(spec.model(), n, start, &mut rng)
            .into_iter()
            .enumerate()
        {
            let bvll = routed_bvll(spec.src, spec.dst, spec.pdu_type, i as u8);
            out.push(SyntheticFrame {
                timestamp: t,
                frame: builder.build(&bvll),
            });
        }
    }
    out.sort_by_key(|f| f.timestamp);
    out
}

/// The Table 1 streams. Sporadic flows get `sporadic_gaps` inter-arrivals each;
/// the periodic flow spans the same time.
pub fn table1_stream(sporadic_gaps: usize, seed: u64) -> Vec<SyntheticFrame> {
    let flows = table1_flows();
    let span = flows
        .iter()
        .filter(|f| f.pattern == Pattern::Sporadic)
        .map(|f| f.tau)
        .fold(0.0, f64::max)
        * sporadic_gaps as f64;
    let gaps: Vec<usize> = flows
        .iter()
        .map(|f| match f.pattern {
            Pattern::Periodic => ((span / f.tau) as usize).max(20),
            _ => sporadic_gaps,
        })
        .collect();
    flow_stream(&flows, &gaps, Timestamp::from_parts(1_425_283_200, 0), seed)
}

/// A sensor-day fixture with a known malfunction.
#[derive(Debug, Clone)]
pub struct ScenarioFixture {
    pub name: &'static str,
    pub meta: SensorMeta,
    pub events: Vec<CovEvent>,
    pub day: NaiveDate,
    pub tz: Tz,
    /// Cluster containing the faulty sensor.
    pub cluster: String,
    /// Local hours of `day` during which the fault is active.
    pub fault_hours: Vec<u8>,
}

fn meta(specs: &[(&str, &str, ValueKind)]) -> SensorMeta {
    SensorMeta {
        sensors: specs
            .iter()
            .map(|&(id, cluster, kind)| {
                (
                    id.to_string(),
                    SensorSpec {
                        sensor_id: id.into(),
                        cluster: cluster.into(),
                        kind,
                        file: format!("{id}.csv"),
                    },
                )
            })
            .collect(),
    }
}

struct EventSink<'a> {
    meta: &'a SensorMeta,
    tz: Tz,
    events: Vec<CovEvent>,
}

impl EventSink<'_> {
    fn push(&mut self, sensor: &str, at: NaiveDateTime, value: SensorValue) {
        let spec = &self.meta.sensors[sensor];
        self.events.push(CovEvent {
            sensor_id: sensor.into(),
            cluster: spec.cluster.clone(),
            timestamp: local_to_timestamp(at, self.tz).expect("unambiguous local time"),
            value,
            filled: false,
        });
    }
}

fn minutes(day: NaiveDate, m: f64) -> NaiveDateTime {
    day.and_hms_opt(0, 0, 0).expect("midnight")
        + chrono::Duration::seconds((m * 60.0).round() as i64)
}

const SCENARIO_START: (i32, u32, u32) = (2015, 3, 2);
const SCENARIO_TZ: Tz = chrono_tz::Europe::Berlin;

fn scenario_days(history_days: u32) -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(SCENARIO_START.0, SCENARIO_START.1, SCENARIO_START.2)
        .expect("valid date");
    first.iter_days().take(history_days as usize + 1).collect()
}

/// A light that follows an occupancy sensor, until on the last day it stays
/// on from the evening departure onward.
pub fn stuck_light(history_days: u32, seed: u64) -> ScenarioFixture {
    let meta = meta(&[
        ("motion-1", "motion", ValueKind::Boolean),
        ("light-1", "light", ValueKind::Boolean),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = EventSink {
        meta: &meta,
        tz: SCENARIO_TZ,
        events: Vec::new(),
    };
    let days = scenario_days(history_days);
    let last = *days.last().expect("at least one day");
    let mut fault_start = 0.0;
    for &day in &days {
        sink.push("motion-1", minutes(day, 0.0), SensorValue::Bool(false));
        sink.push("light-1", minutes(day, 0.5), SensorValue::Bool(false));
        // Arrival, lunch break and departure, in minutes after midnight.
        let arrive = 8.0 * 60.0 + rng.random_range(-15.0..15.0);
        let lunch = 12.0 * 60.0 + rng.random_range(-10.0..10.0);
        let back = lunch + 45.0 + rng.random_range(0.0..15.0);
        let leave = 17.0 * 60.0 + 30.0 + rng.random_range(-15.0..15.0);
        for (m, occupied) in [(arrive, true), (lunch, false), (back, true), (leave, false)] {
            sink.push("motion-1", minutes(day, m), SensorValue::Bool(occupied));
            let stuck = day == last && !occupied && m == leave;
            if stuck {
                fault_start = m;
            } else {
                sink.push(
                    "light-1",
                    minutes(day, m + 1.0),
                    SensorValue::Bool(occupied),
                );
            }
        }
    }
    let first_fault_hour = (fault_start / 60.0) as u8;
    let events = sink.events;
    ScenarioFixture {
        name: "stuck-light",
        meta,
        events,
        day: last,
        tz: SCENARIO_TZ,
        cluster: "light".into(),
        fault_hours: (first_fault_hour..24).collect(),
    }
}

/// Room temperature under a heating schedule, with a thermometer that sticks
/// at a warm reading late in the morning of the last day. The heating then
/// switches off and the real temperature falls, unseen.
pub fn stuck_thermometer(history_days: u32, seed: u64) -> ScenarioFixture {
    let meta = meta(&[
        ("temp-1", "temperature", ValueKind::Float),
        ("heating-1", "heating", ValueKind::Boolean),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = EventSink {
        meta: &meta,
        tz: SCENARIO_TZ,
        events: Vec::new(),
    };
    let noise = Normal::new(0.0, 0.08).expect("valid normal");
    let days = scenario_days(history_days);
    let last = *days.last().expect("at least one day");
    let stuck_at = 10.0 * 60.0 + 40.0;
    let stuck_value = 23.4;
    for &day in &days {
        let heat_on = 6.0 * 60.0 + rng.random_range(-10.0..10.0);
        let heat_off = 18.0 * 60.0 + rng.random_range(-10.0..10.0);
        sink.push("heating-1", minutes(day, 0.0), SensorValue::Bool(false));
        sink.push("heating-1", minutes(day, heat_on), SensorValue::Bool(true));
        let faulty = day == last;
        if faulty {
            sink.push(
                "heating-1",
                minutes(day, stuck_at + 2.0),
                SensorValue::Bool(false),
            );
        } else {
            sink.push(
                "heating-1",
                minutes(day, heat_off),
                SensorValue::Bool(false),
            );
        }
        // Sample the true temperature every two minutes and report changes of
        // at least 0.1 degrees.
        let mut reported: Option<f64> = None;
        let mut m = 0.0;
        while m < 24.0 * 60.0 {
            if faulty && m >= stuck_at {
                if reported != Some(stuck_value) {
                    sink.push("temp-1", minutes(day, m), SensorValue::Float(stuck_value));
                    reported = Some(stuck_value);
                }
                m += 2.0;
                continue;
            }
            let heating = m >= heat_on && m < heat_off;
            let base = if heating {
                19.0 + 2.5 * (1.0 - (-(m - heat_on) / 60.0).exp())
            } else if m >= heat_off {
                19.0 + 2.5 * (-(m - heat_off) / 90.0).exp()
            } else {
                19.0
            };
            let value = ((base + noise.sample(&mut rng)) * 10.0).round() / 10.0;
            if reported.map_or(true, |r| (value - r).abs() >= 0.1 - 1e-9) {
                sink.push("temp-1", minutes(day, m), SensorValue::Float(value));
                reported = Some(value);
            }
            m += 2.0;
        }
    }
    let events = sink.events;
    ScenarioFixture {
        name: "stuck-thermometer",
        meta,
        events,
        day: last,
        tz: SCENARIO_TZ,
        cluster: "temperature".into(),
        fault_hours: ((stuck_at / 60.0) as u8..24).collect(),
    }
}
