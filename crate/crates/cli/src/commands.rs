use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bacscope_core::capture::{read_cov_dir, read_pcap, CaptureError, SensorMeta};
use bacscope_core::codec::parse_frame;
use bacscope_core::flowmap::{
    build_flow_map, AnomalyLog, AnomalyRecord, Baseline, BaselineError, GraphDelta, LiveChecker,
    MapError, VerdictKind,
};
use bacscope_core::graph::{build_graph, export_gexf, DirectedGraph, LayerFilter};
use bacscope_core::scoring::score_day;
use bacscope_core::{FlowTable, ParsedPacket, Timestamp, WeightedDayTree};
use chrono::NaiveDate;
use thiserror::Error;
use tracing::{debug, warn};

use crate::config::{AppConfig, ConfigError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}: {1}")]
    Capture(PathBuf, CaptureError),
    #[error("no capture files given")]
    NoCaptures,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("baseline {0}: {1}")]
    Baseline(PathBuf, BaselineError),
    #[error("no baseline path configured; use --baseline or `baseline = ...`")]
    NoBaselinePath,
    #[error("sensor logs need both `cov_dir` and `sensor_meta`")]
    NoSensorLogs,
    #[error(transparent)]
    Cov(#[from] bacscope_core::capture::CovError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Packets decoded from a set of captures.
#[derive(Debug, Default)]
pub struct Ingested {
    pub packets: Vec<ParsedPacket>,
    pub records: usize,
    pub not_bacnet: usize,
    pub malformed: usize,
    pub truncated_files: usize,
}

/// Read and decode every capture. A truncated file keeps its complete
/// records and logs a warning; any other capture error aborts.
pub fn ingest(paths: &[PathBuf]) -> Result<Ingested, CommandError> {
    let mut out = Ingested::default();
    for path in paths {
        let reader = read_pcap(path).map_err(|e| CommandError::Capture(path.clone(), e))?;
        for record in reader {
            let record = match record {
                Ok(r) => r,
                Err(e @ CaptureError::TruncatedFile { .. }) => {
                    warn!("{}: {e}", path.display());
                    out.truncated_files += 1;
                    break;
                }
                Err(e) => return Err(CommandError::Capture(path.clone(), e)),
            };
            out.records += 1;
            match parse_frame(&record.frame, record.timestamp) {
                Ok(Some(p)) => out.packets.push(p),
                Ok(None) => out.not_bacnet += 1,
                Err(e) => {
                    debug!("{}: record {}: {e}", path.display(), out.records);
                    out.malformed += 1;
                }
            }
        }
    }
    // Stable, so equal timestamps keep file order.
    out.packets.sort_by_key(|p| p.timestamp);
    Ok(out)
}

fn baseline_path(cfg: &AppConfig) -> Result<&Path, CommandError> {
    cfg.baseline.as_deref().ok_or(CommandError::NoBaselinePath)
}

pub fn load_baseline(cfg: &AppConfig) -> Result<Baseline, CommandError> {
    let path = baseline_path(cfg)?;
    Baseline::load(path).map_err(|e| CommandError::Baseline(path.to_path_buf(), e))
}

fn save_baseline(cfg: &AppConfig, baseline: &Baseline) -> Result<(), CommandError> {
    let path = baseline_path(cfg)?;
    baseline
        .save(path)
        .map_err(|e| CommandError::Baseline(path.to_path_buf(), e))
}

#[derive(Debug)]
pub struct AnalyzeSummary {
    pub ingested: Ingested,
    pub baseline: Baseline,
}

/// Build the flow map and baseline from sample captures, write the flow
/// table CSV to `csv_out` and the baseline to the configured path.
pub fn analyze(
    cfg: &AppConfig,
    captures: &[PathBuf],
    csv_out: impl Write,
) -> Result<AnalyzeSummary, CommandError> {
    if captures.is_empty() {
        return Err(CommandError::NoCaptures);
    }
    let ingested = ingest(captures)?;
    // Stamped with the sample's end rather than the wall clock so reruns
    // give identical files.
    let built_at = ingested
        .packets
        .last()
        .map(|p| p.timestamp)
        .unwrap_or_default();
    let map = build_flow_map(&ingested.packets, &cfg.map, built_at)?;
    map.flows.write_csv(csv_out)?;
    let baseline = Baseline::new(map);
    save_baseline(cfg, &baseline)?;
    Ok(AnalyzeSummary { ingested, baseline })
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CheckSummary {
    pub packets: usize,
    pub ok: usize,
    pub anomalous_timing: usize,
    pub anomalous_length: usize,
    pub unknown_flow: usize,
    pub unclassified_flow: usize,
}

impl CheckSummary {
    fn count(&mut self, kind: VerdictKind) {
        self.packets += 1;
        match kind {
            VerdictKind::Ok => self.ok += 1,
            VerdictKind::AnomalousTiming => self.anomalous_timing += 1,
            VerdictKind::AnomalousLength => self.anomalous_length += 1,
            VerdictKind::UnknownFlow => self.unknown_flow += 1,
            VerdictKind::UnclassifiedFlow => self.unclassified_flow += 1,
        }
    }

    pub fn flagged(&self) -> usize {
        self.packets - self.ok
    }
}

/// Replay captures against the baseline's flow map. Each non-ok verdict is
/// written as one NDJSON line and, when an anomaly log is configured,
/// appended to it.
pub fn check(
    cfg: &AppConfig,
    captures: &[PathBuf],
    mut ndjson: impl Write,
) -> Result<CheckSummary, CommandError> {
    let baseline = load_baseline(cfg)?;
    let ingested = ingest(captures)?;
    let mut log = cfg
        .anomaly_log
        .as_deref()
        .map(AnomalyLog::open)
        .transpose()?;
    let mut live = LiveChecker::new(&baseline.flow_map);
    let mut summary = CheckSummary::default();
    let mut next_id = 1;
    for p in &ingested.packets {
        let (key, verdict) = live.check(p);
        summary.count(verdict.kind);
        if verdict.kind == VerdictKind::Ok {
            continue;
        }
        let record = match log.as_mut() {
            Some(log) => log.append(p.timestamp, key.as_ref(), &verdict)?,
            None => AnomalyRecord::new(next_id, p.timestamp, key.as_ref(), &verdict),
        };
        next_id = record.id + 1;
        serde_json::to_writer(&mut ndjson, &record)?;
        ndjson.write_all(b"\n")?;
    }
    ndjson.flush()?;
    Ok(summary)
}

/// Graph of the given captures, or of the baseline's observed traffic.
pub fn graph_for_export(
    cfg: &AppConfig,
    captures: &[PathBuf],
    layer: LayerFilter,
) -> Result<DirectedGraph, CommandError> {
    if captures.is_empty() {
        return Ok(load_baseline(cfg)?.current_graph(layer));
    }
    let ingested = ingest(captures)?;
    Ok(build_graph(
        &FlowTable::from_packets(&ingested.packets, cfg.classify()),
        layer,
    ))
}

pub fn export(
    cfg: &AppConfig,
    captures: &[PathBuf],
    layer: LayerFilter,
    mut out: impl Write,
) -> Result<DirectedGraph, CommandError> {
    let graph = graph_for_export(cfg, captures, layer)?;
    out.write_all(export_gexf(&graph).as_bytes())?;
    out.flush()?;
    Ok(graph)
}

pub fn score(cfg: &AppConfig, day: NaiveDate) -> Result<WeightedDayTree, CommandError> {
    let (Some(dir), Some(meta_path)) = (&cfg.cov_dir, &cfg.sensor_meta) else {
        return Err(CommandError::NoSensorLogs);
    };
    let meta = SensorMeta::load(meta_path)?;
    let events = read_cov_dir(dir, &meta, cfg.timezone)?;
    Ok(score_day(&meta, &events, day, &cfg.scoring, cfg.timezone))
}

/// Where a stored tree for `day` lives.
pub fn tree_path(dir: &Path, day: NaiveDate) -> PathBuf {
    dir.join(format!("{day}.json"))
}

pub fn write_tree(tree: &WeightedDayTree, out: impl Write) -> Result<(), CommandError> {
    let mut out = io::BufWriter::new(out);
    serde_json::to_writer_pretty(&mut out, tree)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn store_tree(dir: &Path, tree: &WeightedDayTree) -> Result<PathBuf, CommandError> {
    fs::create_dir_all(dir)?;
    let path = tree_path(dir, tree.day);
    write_tree(tree, fs::File::create(&path)?)?;
    Ok(path)
}

/// Fold a day of captures into the baseline and issue the next delta.
pub fn regenerate(cfg: &AppConfig, captures: &[PathBuf]) -> Result<GraphDelta, CommandError> {
    if captures.is_empty() {
        return Err(CommandError::NoCaptures);
    }
    let mut baseline = load_baseline(cfg)?;
    let ingested = ingest(captures)?;
    let day = FlowTable::from_packets(&ingested.packets, cfg.classify());
    baseline.regenerate(&day, cfg.classify());
    save_baseline(cfg, &baseline)?;
    Ok(baseline.pending_delta())
}

pub fn now() -> Timestamp {
    let d = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    Timestamp::from_parts(d.as_secs() as i64, d.subsec_nanos())
}
