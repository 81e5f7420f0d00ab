//! Append-only anomaly log.
//!
//! Records are newline-delimited JSON. Acknowledgements go to a sidecar file
//! (`<log>.acks`) so the record file is never rewritten.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Verdict, VerdictKind};
use crate::flow::FlowKey;
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowLabel {
    pub source: String,
    pub destination: String,
    pub layer: String,
    #[serde(rename = "type")]
    pub type_code: u8,
}

impl From<&FlowKey> for FlowLabel {
    fn from(k: &FlowKey) -> Self {
        Self {
            source: k.src.to_string(),
            destination: k.dst.to_string(),
            layer: k.layer.to_string(),
            type_code: k.type_code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub id: u64,
    pub timestamp: Timestamp,
    pub flow: Option<FlowLabel>,
    pub kind: VerdictKind,
    pub likelihood: Option<f64>,
    pub detail: String,
    /// Only meaningful when read back through [`AnomalyLog`].
    #[serde(default)]
    pub acknowledged: bool,
}

impl AnomalyRecord {
    pub fn new(id: u64, timestamp: Timestamp, flow: Option<&FlowKey>, verdict: &Verdict) -> Self {
        Self {
            id,
            timestamp,
            flow: flow.map(FlowLabel::from),
            kind: verdict.kind,
            likelihood: verdict.likelihood,
            detail: verdict.detail.clone(),
            acknowledged: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Ack {
    id: u64,
    at: Timestamp,
}

fn acks_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".acks");
    PathBuf::from(p)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        out.push(v);
    }
    Ok(out)
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(value).map_err(io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())
}

#[derive(Debug)]
pub struct AnomalyLog {
    path: PathBuf,
    records: Vec<AnomalyRecord>,
    acked: BTreeSet<u64>,
}

impl AnomalyLog {
    /// Open or create the log at `path`.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let records: Vec<AnomalyRecord> = read_lines(&path)?;
        let acked = read_lines::<Ack>(&acks_path(&path))?
            .into_iter()
            .map(|a| a.id)
            .collect();
        Ok(Self {
            path,
            records,
            acked,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn next_id(&self) -> u64 {
        self.records.last().map_or(1, |r| r.id + 1)
    }

    /// Persist a verdict and return the stored record.
    pub fn append(
        &mut self,
        timestamp: Timestamp,
        flow: Option<&FlowKey>,
        verdict: &Verdict,
    ) -> io::Result<AnomalyRecord> {
        let record = AnomalyRecord::new(self.next_id(), timestamp, flow, verdict);
        append_line(&self.path, &record)?;
        self.records.push(record.clone());
        Ok(record)
    }

    /// Records at or after `since`, with acknowledgement state.
    pub fn since(&self, since: Option<Timestamp>) -> Vec<AnomalyRecord> {
        self.records
            .iter()
            .filter(|r| since.map_or(true, |t| r.timestamp >= t))
            .map(|r| AnomalyRecord {
                acknowledged: self.acked.contains(&r.id),
                ..r.clone()
            })
            .collect()
    }

    pub fn get(&self, id: u64) -> Option<AnomalyRecord> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .map(|r| AnomalyRecord {
                acknowledged: self.acked.contains(&id),
                ..r.clone()
            })
    }

    /// `Ok(None)` for an unknown id. Acknowledging twice is harmless.
    pub fn acknowledge(&mut self, id: u64, at: Timestamp) -> io::Result<Option<AnomalyRecord>> {
        if !self.records.iter().any(|r| r.id == id) {
            return Ok(None);
        }
        if self.acked.insert(id) {
            append_line(&acks_path(&self.path), &Ack { id, at })?;
        }
        Ok(self.get(id))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
