//! Durable analysis state: the flow map, all traffic observed since, the
//! confirmed reference graph and the outstanding delta.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::reference::{
    confirm_delta, diff_graphs, disappeared, ConfirmError, ConfirmRequest, Disappeared,
};
use super::{FlowMap, GraphDelta, ReferenceGraph};
use crate::flow::{ClassifyConfig, FlowTable};
use crate::graph::{build_graph, DirectedGraph, LayerFilter};
use crate::Timestamp;

pub const SCHEMA_VERSION: u32 = 1;

/// Operator id recorded for the topology of the sample period itself.
const SAMPLE_CONFIRMER: &str = "baseline";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("baseline I/O: {0}")]
    Io(#[from] io::Error),
    #[error("baseline is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("baseline schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Confirm(#[from] ConfirmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub schema_version: u32,
    pub flow_map: FlowMap,
    /// Sample traffic plus every regenerated day.
    pub observed: FlowTable,
    pub reference: ReferenceGraph,
    pub delta: GraphDelta,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

impl Baseline {
    /// The sample topology becomes the initial reference.
    pub fn new(flow_map: FlowMap) -> Self {
        let graph = build_graph(&flow_map.flows, LayerFilter::Both);
        let reference = ReferenceGraph::from_graph(&graph, SAMPLE_CONFIRMER, flow_map.built_at);
        Self {
            schema_version: SCHEMA_VERSION,
            observed: flow_map.flows.clone(),
            flow_map,
            reference,
            delta: GraphDelta::default(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.delta.generation
    }

    pub fn current_graph(&self, filter: LayerFilter) -> DirectedGraph {
        build_graph(&self.observed, filter)
    }

    /// Delta of the observed traffic against the reference, at the current generation.
    pub fn diff(&self) -> GraphDelta {
        diff_graphs(
            &self.reference,
            &self.current_graph(LayerFilter::Both),
            self.delta.generation,
        )
    }

    pub fn disappeared(&self) -> Disappeared {
        disappeared(&self.reference, &self.current_graph(LayerFilter::Both))
    }

    /// Add a day of traffic and issue a new delta generation.
    pub fn regenerate(&mut self, day: &FlowTable, cfg: &ClassifyConfig) -> &GraphDelta {
        self.observed.merge(day, cfg);
        let generation = self.delta.generation + 1;
        self.delta = diff_graphs(
            &self.reference,
            &self.current_graph(LayerFilter::Both),
            generation,
        );
        &self.delta
    }

    /// Items of the current delta still awaiting confirmation.
    pub fn pending_delta(&self) -> GraphDelta {
        self.delta.pending(&self.reference)
    }

    /// Confirm items of the current delta. The generation is unchanged, so
    /// repeating a request succeeds without further effect.
    pub fn confirm(
        &mut self,
        request: &ConfirmRequest,
        operator: &str,
        at: Timestamp,
    ) -> Result<&ReferenceGraph, ConfirmError> {
        self.reference = confirm_delta(&self.reference, &self.delta, request, operator, at)?;
        Ok(&self.reference)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(BaselineError::SchemaVersion {
                found: probe.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    /// Written to a sibling temporary file and renamed into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
