//! Weighted directed communication graph.
//!
//! Edge weight is the edge's share of all packets included in the graph.
//! Broadcast destinations collapse into one synthetic `broadcast` node.

mod gexf;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use gexf::{export_gexf, GEXF_NAMESPACE};

use crate::flow::{FlowLayer, FlowTable};
use crate::{BacnetAddress, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFilter {
    Network,
    Application,
    #[default]
    Both,
}

impl LayerFilter {
    pub fn includes(self, layer: FlowLayer) -> bool {
        match self {
            LayerFilter::Both => true,
            LayerFilter::Network => layer == FlowLayer::Network,
            LayerFilter::Application => layer == FlowLayer::Application,
        }
    }
}

impl std::str::FromStr for LayerFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "network" | "network-message" => Ok(LayerFilter::Network),
            "application" | "application-data" => Ok(LayerFilter::Application),
            "both" | "all" => Ok(LayerFilter::Both),
            other => Err(format!("unknown layer filter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: BacnetAddress,
    pub dst: BacnetAddress,
    /// Fraction of all included packets, in [0, 1].
    pub weight: f64,
    pub packets: u64,
    pub first_seen: Option<Timestamp>,
}

/// Nodes and edges are kept sorted by canonical label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectedGraph {
    pub nodes: Vec<BacnetAddress>,
    pub edges: Vec<Edge>,
}

fn graph_node(addr: &BacnetAddress) -> BacnetAddress {
    if addr.is_broadcast() {
        BacnetAddress::broadcast()
    } else {
        addr.clone()
    }
}

impl DirectedGraph {
    /// Aggregate `(src, dst, packets, first_seen)` observations.
    pub fn from_counts(
        counts: impl IntoIterator<Item = (BacnetAddress, BacnetAddress, u64, Option<Timestamp>)>,
    ) -> Self {
        let mut agg: BTreeMap<(String, String), Edge> = BTreeMap::new();
        for (src, dst, packets, first_seen) in counts {
            if packets == 0 {
                continue;
            }
            let (src, dst) = (graph_node(&src), graph_node(&dst));
            let e = agg
                .entry((src.to_string(), dst.to_string()))
                .or_insert_with(|| Edge {
                    src,
                    dst,
                    weight: 0.0,
                    packets: 0,
                    first_seen: None,
                });
            e.packets += packets;
            e.first_seen = match (e.first_seen, first_seen) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
        let total: u64 = agg.values().map(|e| e.packets).sum();
        let mut nodes: BTreeMap<String, BacnetAddress> = BTreeMap::new();
        let edges: Vec<Edge> = agg
            .into_values()
            .map(|mut e| {
                e.weight = e.packets as f64 / total as f64;
                nodes
                    .entry(e.src.to_string())
                    .or_insert_with(|| e.src.clone());
                nodes
                    .entry(e.dst.to_string())
                    .or_insert_with(|| e.dst.clone());
                e
            })
            .collect();
        Self {
            nodes: nodes.into_values().collect(),
            edges,
        }
    }

    pub fn total_packets(&self) -> u64 {
        self.edges.iter().map(|e| e.packets).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Earliest sighting of each node over its incident edges.
    pub fn node_first_seen(&self) -> BTreeMap<BacnetAddress, Option<Timestamp>> {
        let mut out: BTreeMap<BacnetAddress, Option<Timestamp>> =
            self.nodes.iter().map(|n| (n.clone(), None)).collect();
        for e in &self.edges {
            for n in [&e.src, &e.dst] {
                let slot = out.entry(n.clone()).or_default();
                *slot = match (*slot, e.first_seen) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
        }
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.to_string(),
                    broadcast: n.is_broadcast(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    source: e.src.to_string(),
                    target: e.dst.to_string(),
                    weight: e.weight,
                    packets: e.packets,
                })
                .collect(),
        }
    }
}

/// Build the graph of all flows in `table` whose layer passes `filter`.
pub fn build_graph(table: &FlowTable, filter: LayerFilter) -> DirectedGraph {
    DirectedGraph::from_counts(
        table
            .entries()
            .filter(|e| filter.includes(e.key.layer))
            .map(|e| {
                (
                    e.key.src.clone(),
                    e.key.dst.clone(),
                    e.stats.count,
                    Some(e.stats.first_ts),
                )
            }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: String,
    pub broadcast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub packets: u64,
}

/// Graph form consumed by the operator console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
}
