//! BACnet/IP traffic analysis.
//!
//! The pipeline: [`capture`] reads pcap files and sensor CSV logs, [`codec`]
//! decodes frames, [`flow`] groups packets into typed flows and classifies
//! them as periodic or sporadic, [`flowmap`] scores packets against the
//! resulting model and tracks the operator-confirmed topology, [`graph`]
//! exports that topology as GEXF or JSON, and [`scoring`] turns a day of
//! sensor events into the weighted hour tree shown to operators.

pub mod capture;
pub mod codec;
pub mod flow;
pub mod flowmap;
pub mod graph;
pub mod scoring;
pub mod synth;
mod timestamp;

pub use codec::{parse_frame, BacnetAddress, MalformedPacket, ParsedPacket};
pub use flow::{FlowClass, FlowKey, FlowStats, FlowTable, Pattern};
pub use flowmap::{Baseline, FlowMap, GraphDelta, ReferenceGraph};
pub use graph::DirectedGraph;
pub use scoring::WeightedDayTree;
pub use timestamp::Timestamp;
