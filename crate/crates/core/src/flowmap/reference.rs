//! Operator-confirmed reference topology and the deltas raised against it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::{BacnetAddress, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub at: Timestamp,
    pub by: String,
}

type EdgeKey = (BacnetAddress, BacnetAddress);

/// Nodes and edges an operator has accepted as normal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGraph {
    #[serde(serialize_with = "nodes_out", deserialize_with = "nodes_in")]
    nodes: BTreeMap<BacnetAddress, Confirmation>,
    #[serde(serialize_with = "edges_out", deserialize_with = "edges_in")]
    edges: BTreeMap<EdgeKey, Confirmation>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    address: BacnetAddress,
    #[serde(flatten)]
    confirmation: Confirmation,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    src: BacnetAddress,
    dst: BacnetAddress,
    #[serde(flatten)]
    confirmation: Confirmation,
}

fn nodes_out<S: Serializer>(
    m: &BTreeMap<BacnetAddress, Confirmation>,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|(a, c)| NodeRecord {
        address: a.clone(),
        confirmation: c.clone(),
    }))
}

fn nodes_in<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<BTreeMap<BacnetAddress, Confirmation>, D::Error> {
    let v: Vec<NodeRecord> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|r| (r.address, r.confirmation)).collect())
}

fn edges_out<S: Serializer>(m: &BTreeMap<EdgeKey, Confirmation>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|((a, b), c)| EdgeRecord {
        src: a.clone(),
        dst: b.clone(),
        confirmation: c.clone(),
    }))
}

fn edges_in<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<EdgeKey, Confirmation>, D::Error> {
    let v: Vec<EdgeRecord> = Vec::deserialize(d)?;
    let map: BTreeMap<EdgeKey, Confirmation> = v
        .into_iter()
        .map(|r| ((r.src, r.dst), r.confirmation))
        .collect();
    Ok(map)
}

impl ReferenceGraph {
    /// Every node and edge of `graph`, confirmed by `by` at `at`.
    pub fn from_graph(graph: &DirectedGraph, by: &str, at: Timestamp) -> Self {
        let mut r = Self::default();
        for n in &graph.nodes {
            r.confirm_node(n, by, at);
        }
        for e in &graph.edges {
            r.confirm_edge(&e.src, &e.dst, by, at);
        }
        r
    }

    pub fn contains_node(&self, n: &BacnetAddress) -> bool {
        self.nodes.contains_key(n)
    }

    pub fn contains_edge(&self, src: &BacnetAddress, dst: &BacnetAddress) -> bool {
        self.edges.contains_key(&(src.clone(), dst.clone()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&BacnetAddress, &Confirmation)> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&BacnetAddress, &BacnetAddress, &Confirmation)> {
        self.edges.iter().map(|((a, b), c)| (a, b, c))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn confirm_node(&mut self, n: &BacnetAddress, by: &str, at: Timestamp) {
        self.nodes.entry(n.clone()).or_insert_with(|| Confirmation {
            at,
            by: by.to_string(),
        });
    }

    /// Endpoints are confirmed along with the edge.
    fn confirm_edge(&mut self, src: &BacnetAddress, dst: &BacnetAddress, by: &str, at: Timestamp) {
        self.confirm_node(src, by, at);
        self.confirm_node(dst, by, at);
        self.edges
            .entry((src.clone(), dst.clone()))
            .or_insert_with(|| Confirmation {
                at,
                by: by.to_string(),
            });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNode {
    pub address: BacnetAddress,
    pub label: String,
    pub first_seen: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEdge {
    pub src: BacnetAddress,
    pub dst: BacnetAddress,
    pub source: String,
    pub target: String,
    pub first_seen: Option<Timestamp>,
}

/// Nodes and edges observed but not in the reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub generation: u64,
    pub new_nodes: Vec<DeltaNode>,
    pub new_edges: Vec<DeltaEdge>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.new_nodes.is_empty() && self.new_edges.is_empty()
    }

    /// Items not yet in `reference`.
    pub fn pending(&self, reference: &ReferenceGraph) -> GraphDelta {
        GraphDelta {
            generation: self.generation,
            new_nodes: self
                .new_nodes
                .iter()
                .filter(|n| !reference.contains_node(&n.address))
                .cloned()
                .collect(),
            new_edges: self
                .new_edges
                .iter()
                .filter(|e| !reference.contains_edge(&e.src, &e.dst))
                .cloned()
                .collect(),
        }
    }

    /// Confirmation request covering every item.
    pub fn confirm_all(&self) -> ConfirmRequest {
        ConfirmRequest {
            generation: self.generation,
            nodes: self.new_nodes.iter().map(|n| n.label.clone()).collect(),
            edges: self
                .new_edges
                .iter()
                .map(|e| (e.source.clone(), e.target.clone()))
                .collect(),
        }
    }
}

/// One-sided set difference `current - reference`.
pub fn diff_graphs(
    reference: &ReferenceGraph,
    current: &DirectedGraph,
    generation: u64,
) -> GraphDelta {
    let first_seen = current.node_first_seen();
    let new_nodes = current
        .nodes
        .iter()
        .filter(|n| !reference.contains_node(n))
        .map(|n| DeltaNode {
            address: n.clone(),
            label: n.to_string(),
            first_seen: first_seen.get(n).copied().flatten(),
        })
        .collect();
    let new_edges = current
        .edges
        .iter()
        .filter(|e| !reference.contains_edge(&e.src, &e.dst))
        .map(|e| DeltaEdge {
            src: e.src.clone(),
            dst: e.dst.clone(),
            source: e.src.to_string(),
            target: e.dst.to_string(),
            first_seen: e.first_seen,
        })
        .collect();
    GraphDelta {
        generation,
        new_nodes,
        new_edges,
    }
}

/// Reference items missing from the current graph. Informational only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Disappeared {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

pub fn disappeared(reference: &ReferenceGraph, current: &DirectedGraph) -> Disappeared {
    let nodes: BTreeSet<&BacnetAddress> = current.nodes.iter().collect();
    let edges: BTreeSet<(&BacnetAddress, &BacnetAddress)> =
        current.edges.iter().map(|e| (&e.src, &e.dst)).collect();
    Disappeared {
        nodes: reference
            .nodes
            .keys()
            .filter(|n| !nodes.contains(n))
            .map(ToString::to_string)
            .collect(),
        edges: reference
            .edges
            .keys()
            .filter(|(a, b)| !edges.contains(&(a, b)))
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    }
}

/// Items to confirm, named by canonical label, against one delta generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmRequest {
    pub generation: u64,
    #[serde(default)]
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfirmError {
    #[error("delta generation {requested} is stale; current generation is {current}")]
    StaleDelta { requested: u64, current: u64 },
    #[error("`{0}` is not part of the issued delta")]
    NotInDelta(String),
}

/// Add confirmed items to a copy of `reference`.
///
/// Items already in the reference are accepted unchanged, so repeating a
/// confirmation is a no-op.
pub fn confirm_delta(
    reference: &ReferenceGraph,
    delta: &GraphDelta,
    request: &ConfirmRequest,
    operator: &str,
    at: Timestamp,
) -> Result<ReferenceGraph, ConfirmError> {
    if request.generation != delta.generation {
        return Err(ConfirmError::StaleDelta {
            requested: request.generation,
            current: delta.generation,
        });
    }
    let nodes: BTreeMap<&str, &DeltaNode> = delta
        .new_nodes
        .iter()
        .map(|n| (n.label.as_str(), n))
        .collect();
    let edges: BTreeMap<(&str, &str), &DeltaEdge> = delta
        .new_edges
        .iter()
        .map(|e| ((e.source.as_str(), e.target.as_str()), e))
        .collect();
    let ref_node_by_label: BTreeMap<String, &BacnetAddress> =
        reference.nodes.keys().map(|n| (n.to_string(), n)).collect();
    let ref_edge_by_label: BTreeSet<(String, String)> = reference
        .edges
        .keys()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();

    let mut out = reference.clone();
    for label in &request.nodes {
        match nodes.get(label.as_str()) {
            Some(n) => out.confirm_node(&n.address, operator, at),
            None if ref_node_by_label.contains_key(label) => {}
            None => return Err(ConfirmError::NotInDelta(label.clone())),
        }
    }
    for (src, dst) in &request.edges {
        match edges.get(&(src.as_str(), dst.as_str())) {
            Some(e) => out.confirm_edge(&e.src, &e.dst, operator, at),
            None if ref_edge_by_label.contains(&(src.clone(), dst.clone())) => {}
            None => return Err(ConfirmError::NotInDelta(format!("{src} -> {dst}"))),
        }
    }
    Ok(out)
}
