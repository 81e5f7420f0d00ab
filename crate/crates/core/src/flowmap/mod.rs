//! The probabilistic flow map: per-flow timing and length models built from
//! sample traffic, used to score each later packet.

mod baseline;
pub mod feed;
pub mod likelihood;
mod reference;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use baseline::{Baseline, BaselineError, SCHEMA_VERSION};
pub use feed::{AnomalyLog, AnomalyRecord, FlowLabel};
pub use reference::{
    confirm_delta, diff_graphs, disappeared, ConfirmError, ConfirmRequest, Confirmation, DeltaEdge,
    DeltaNode, Disappeared, GraphDelta, ReferenceGraph,
};

use crate::codec::ParsedPacket;
use crate::flow::{flow_key, ClassifyConfig, FlowBuilder, FlowEntry, FlowKey, FlowTable, Pattern};
use crate::Timestamp;

pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_LENGTH_SD_MULT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub classify: ClassifyConfig,
    pub default_threshold: f64,
    /// Per-connection overrides keyed by (source label, destination label).
    pub connection_thresholds: BTreeMap<(String, String), f64>,
    pub length_sd_mult: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            classify: ClassifyConfig::default(),
            default_threshold: DEFAULT_THRESHOLD,
            connection_thresholds: BTreeMap::new(),
            length_sd_mult: DEFAULT_LENGTH_SD_MULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("sample contains no classifiable BACnet packets")]
    EmptySample,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LikelihoodError {
    #[error("flow {0} is not in the flow map")]
    UnknownFlow(String),
    #[error("flow {0} has no timing model")]
    UnclassifiedFlow(String),
}

fn valid_threshold(t: f64) -> Result<f64, MapError> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(MapError::InvalidThreshold(t))
    }
}

/// Reference model of the sample period. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMap {
    pub flows: FlowTable,
    #[serde(serialize_with = "thresholds_out", deserialize_with = "thresholds_in")]
    thresholds: BTreeMap<FlowKey, f64>,
    pub default_threshold: f64,
    pub length_sd_mult: f64,
    pub min_length_samples: u64,
    pub built_at: Timestamp,
    pub sample_span: (Timestamp, Timestamp),
}

#[derive(Serialize, Deserialize)]
struct ThresholdEntry {
    key: FlowKey,
    threshold: f64,
}

fn thresholds_out<S: Serializer>(m: &BTreeMap<FlowKey, f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|(k, &t)| ThresholdEntry {
        key: k.clone(),
        threshold: t,
    }))
}

fn thresholds_in<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<FlowKey, f64>, D::Error> {
    let v: Vec<ThresholdEntry> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|e| (e.key, e.threshold)).collect())
}

/// Classify flows over the sample packets and fit the map.
pub fn build_flow_map<'a>(
    packets: impl IntoIterator<Item = &'a ParsedPacket>,
    cfg: &MapConfig,
    built_at: Timestamp,
) -> Result<FlowMap, MapError> {
    let mut b = FlowBuilder::new(crate::flow::DEFAULT_REORDER_WINDOW_SECS);
    for p in packets {
        b.push(p);
    }
    FlowMap::from_table(b.finish(&cfg.classify), cfg, built_at)
}

impl FlowMap {
    pub fn from_table(
        flows: FlowTable,
        cfg: &MapConfig,
        built_at: Timestamp,
    ) -> Result<Self, MapError> {
        if flows.is_empty() {
            return Err(MapError::EmptySample);
        }
        valid_threshold(cfg.default_threshold)?;
        let mut thresholds = BTreeMap::new();
        for e in flows.entries() {
            let conn = (e.key.src.to_string(), e.key.dst.to_string());
            let t = cfg
                .connection_thresholds
                .get(&conn)
                .copied()
                .unwrap_or(cfg.default_threshold);
            thresholds.insert(e.key.clone(), valid_threshold(t)?);
        }
        let start = flows
            .entries()
            .map(|e| e.stats.first_ts)
            .min()
            .expect("non-empty");
        let end = flows
            .entries()
            .map(|e| e.stats.last_ts)
            .max()
            .expect("non-empty");
        Ok(Self {
            flows,
            thresholds,
            default_threshold: cfg.default_threshold,
            length_sd_mult: cfg.length_sd_mult,
            min_length_samples: cfg.classify.min_samples,
            built_at,
            sample_span: (start, end),
        })
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowEntry> {
        self.flows.get(key)
    }

    pub fn threshold(&self, key: &FlowKey) -> f64 {
        self.thresholds
            .get(key)
            .copied()
            .unwrap_or(self.default_threshold)
    }

    pub fn count_by_pattern(&self, pattern: Pattern) -> usize {
        self.flows
            .entries()
            .filter(|e| e.class.pattern() == pattern)
            .count()
    }

    /// Probability of seeing a gap at least this far from typical on `key`.
    pub fn packet_likelihood(&self, key: &FlowKey, gap: f64) -> Result<f64, LikelihoodError> {
        let entry = self
            .get(key)
            .ok_or_else(|| LikelihoodError::UnknownFlow(key.to_string()))?;
        let unclassified = || LikelihoodError::UnclassifiedFlow(key.to_string());
        match entry.class.pattern() {
            Pattern::Sporadic => {
                let lambda = entry.class.lambda().ok_or_else(unclassified)?;
                Ok(likelihood::exponential_tail(lambda, gap))
            }
            Pattern::Periodic => {
                let (tau, sigma) = entry
                    .stats
                    .tau()
                    .zip(entry.stats.sigma())
                    .ok_or_else(unclassified)?;
                Ok(likelihood::gaussian_tail(tau, sigma, gap))
            }
            Pattern::Unclassified => Err(unclassified()),
        }
    }

    /// Score one packet given the previous packet time on its flow.
    pub fn check_packet(&self, packet: &ParsedPacket, prev_ts: Option<Timestamp>) -> Verdict {
        let Some(key) = flow_key(packet) else {
            return Verdict::new(
                VerdictKind::UnknownFlow,
                None,
                "packet carries no NPDU".into(),
            );
        };
        self.check_keyed(&key, packet, prev_ts)
    }

    fn check_keyed(
        &self,
        key: &FlowKey,
        packet: &ParsedPacket,
        prev_ts: Option<Timestamp>,
    ) -> Verdict {
        let Some(entry) = self.get(key) else {
            return Verdict::new(
                VerdictKind::UnknownFlow,
                None,
                format!("no flow {key} in map"),
            );
        };
        let mut likelihood = None;
        if let Some(prev) = prev_ts {
            let gap = packet.timestamp.seconds_since(prev).max(0.0);
            match self.packet_likelihood(key, gap) {
                Ok(p) => {
                    let threshold = self.threshold(key);
                    if p < threshold {
                        return Verdict::new(
                            VerdictKind::AnomalousTiming,
                            Some(p),
                            format!("gap {gap:.6}s has likelihood {p:.3e} below {threshold}"),
                        );
                    }
                    likelihood = Some(p);
                }
                Err(_) => {
                    return Verdict::new(
                        VerdictKind::UnclassifiedFlow,
                        None,
                        format!("flow {key} is {}", entry.class.pattern()),
                    );
                }
            }
        } else if entry.class.pattern() == Pattern::Unclassified {
            return Verdict::new(
                VerdictKind::UnclassifiedFlow,
                None,
                format!("flow {key} is unclassified"),
            );
        }

        let stats = &entry.stats;
        if stats.length_count() >= self.min_length_samples {
            let len = f64::from(packet.total_length);
            let dev = (len - stats.mean_length()).abs();
            if dev > self.length_sd_mult * stats.sd_length() {
                return Verdict::new(
                    VerdictKind::AnomalousLength,
                    likelihood,
                    format!(
                        "length {} deviates {dev:.1} from mean {:.1} (sd {:.2})",
                        packet.total_length,
                        stats.mean_length(),
                        stats.sd_length()
                    ),
                );
            }
        }
        Verdict::new(VerdictKind::Ok, likelihood, String::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    Ok,
    AnomalousTiming,
    AnomalousLength,
    UnknownFlow,
    UnclassifiedFlow,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::Ok => "ok",
            VerdictKind::AnomalousTiming => "anomalous-timing",
            VerdictKind::AnomalousLength => "anomalous-length",
            VerdictKind::UnknownFlow => "unknown-flow",
            VerdictKind::UnclassifiedFlow => "unclassified-flow",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub likelihood: Option<f64>,
    pub detail: String,
}

impl Verdict {
    fn new(kind: VerdictKind, likelihood: Option<f64>, detail: String) -> Self {
        Self {
            kind,
            likelihood,
            detail,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.kind == VerdictKind::Ok
    }
}

/// Live checking state: last packet time per flow.
pub struct LiveChecker<'a> {
    map: &'a FlowMap,
    last_seen: HashMap<FlowKey, Timestamp>,
}

impl<'a> LiveChecker<'a> {
    pub fn new(map: &'a FlowMap) -> Self {
        Self {
            map,
            last_seen: HashMap::new(),
        }
    }

    pub fn check(&mut self, packet: &ParsedPacket) -> (Option<FlowKey>, Verdict) {
        let Some(key) = flow_key(packet) else {
            return (None, self.map.check_packet(packet, None));
        };
        let prev = self.last_seen.get(&key).copied();
        let verdict = self.map.check_keyed(&key, packet, prev);
        let last = self
            .last_seen
            .entry(key.clone())
            .or_insert(packet.timestamp);
        *last = (*last).max(packet.timestamp);
        (Some(key), verdict)
    }
}
