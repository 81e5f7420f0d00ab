use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{classify, flow_key, ClassifyConfig, FlowClass, FlowKey, FlowStats};
use crate::codec::ParsedPacket;
use crate::Timestamp;

pub const DEFAULT_REORDER_WINDOW_SECS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub key: FlowKey,
    pub stats: FlowStats,
    pub class: FlowClass,
    /// Too few packets to classify; `class` is then unclassified.
    #[serde(default)]
    pub insufficient: bool,
}

/// Flow statistics keyed by [`FlowKey`], iterated in key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    #[serde(serialize_with = "entries_out", deserialize_with = "entries_in")]
    flows: BTreeMap<FlowKey, FlowEntry>,
    /// Packets without an NPDU.
    pub untypable: u64,
}

fn entries_out<S: Serializer>(map: &BTreeMap<FlowKey, FlowEntry>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(map.values())
}

fn entries_in<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<FlowKey, FlowEntry>, D::Error> {
    let v: Vec<FlowEntry> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|e| (e.key.clone(), e)).collect())
}

impl FlowTable {
    pub fn get(&self, key: &FlowKey) -> Option<&FlowEntry> {
        self.flows.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FlowEntry> {
        self.flows.values()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// Packets across all flows.
    pub fn packet_count(&self) -> u64 {
        self.flows.values().map(|e| e.stats.count).sum()
    }

    pub fn from_stats(
        stats: impl IntoIterator<Item = (FlowKey, FlowStats)>,
        untypable: u64,
        cfg: &ClassifyConfig,
    ) -> Self {
        let flows = stats
            .into_iter()
            .map(|(key, stats)| {
                let (class, insufficient) = match classify(&stats, cfg) {
                    Ok(c) => (c, false),
                    Err(_) => (FlowClass::unclassified(), true),
                };
                (
                    key.clone(),
                    FlowEntry {
                        key,
                        stats,
                        class,
                        insufficient,
                    },
                )
            })
            .collect();
        Self { flows, untypable }
    }

    /// Build from packets already in timestamp order per flow.
    pub fn from_packets<'a>(
        packets: impl IntoIterator<Item = &'a ParsedPacket>,
        cfg: &ClassifyConfig,
    ) -> Self {
        let mut b = FlowBuilder::new(DEFAULT_REORDER_WINDOW_SECS);
        for p in packets {
            b.push(p);
        }
        b.finish(cfg)
    }

    /// Fold in a later table (e.g. the next day's capture) and reclassify.
    pub fn merge(&mut self, later: &FlowTable, cfg: &ClassifyConfig) {
        let mut stats: BTreeMap<FlowKey, FlowStats> = std::mem::take(&mut self.flows)
            .into_iter()
            .map(|(k, e)| (k, e.stats))
            .collect();
        for e in later.entries() {
            stats
                .entry(e.key.clone())
                .and_modify(|s| s.merge(&e.stats))
                .or_insert_with(|| e.stats.clone());
        }
        *self = FlowTable::from_stats(stats, self.untypable + later.untypable, cfg);
    }

    /// CSV with columns source, destination, layer, type, count, tau, sigma, class.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "source",
            "destination",
            "layer",
            "type",
            "count",
            "tau",
            "sigma",
            "class",
        ])?;
        for e in self.entries() {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            w.write_record([
                e.key.src.to_string(),
                e.key.dst.to_string(),
                e.key.layer.to_string(),
                format!("0x{:02x}", e.key.type_code),
                e.stats.count.to_string(),
                fmt(e.stats.tau()),
                fmt(e.stats.sigma()),
                e.class.pattern().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    timestamp: Timestamp,
    seq: u64,
    key: FlowKey,
    length: u16,
}

/// Incremental flow table construction.
///
/// Packets are held in a reorder buffer and released once they are older
/// than the newest timestamp seen minus the window, so small capture
/// reorderings do not produce negative gaps. Larger inversions reach
/// [`FlowStats::record`] out of order and are counted as late.
pub struct FlowBuilder {
    window_nanos: i64,
    pending: BinaryHeap<Reverse<Pending>>,
    newest: Option<Timestamp>,
    seq: u64,
    stats: BTreeMap<FlowKey, FlowStats>,
    untypable: u64,
    total: u64,
}

impl FlowBuilder {
    pub fn new(reorder_window_secs: f64) -> Self {
        Self {
            window_nanos: (reorder_window_secs.max(0.0) * 1e9) as i64,
            pending: BinaryHeap::new(),
            newest: None,
            seq: 0,
            stats: BTreeMap::new(),
            untypable: 0,
            total: 0,
        }
    }

    pub fn push(&mut self, packet: &ParsedPacket) {
        self.total += 1;
        let Some(key) = flow_key(packet) else {
            self.untypable += 1;
            return;
        };
        self.seq += 1;
        self.pending.push(Reverse(Pending {
            timestamp: packet.timestamp,
            seq: self.seq,
            key,
            length: packet.total_length,
        }));
        let newest = self
            .newest
            .map_or(packet.timestamp, |n| n.max(packet.timestamp));
        self.newest = Some(newest);
        let horizon = Timestamp::from_nanos(newest.as_nanos() - self.window_nanos);
        while self
            .pending
            .peek()
            .is_some_and(|Reverse(p)| p.timestamp < horizon)
        {
            let Reverse(p) = self.pending.pop().expect("peeked");
            self.apply(p);
        }
    }

    fn apply(&mut self, p: Pending) {
        match self.stats.get_mut(&p.key) {
            Some(s) => s.record(p.timestamp, p.length),
            None => {
                self.stats
                    .insert(p.key, FlowStats::new(p.timestamp, p.length));
            }
        }
    }

    /// Packets seen so far, including untypable ones.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn finish(mut self, cfg: &ClassifyConfig) -> FlowTable {
        while let Some(Reverse(p)) = self.pending.pop() {
            self.apply(p);
        }
        FlowTable::from_stats(self.stats, self.untypable, cfg)
    }
}
