//! Reading capture files and sensor logs.

pub mod cov;
pub mod pcap;

use std::io;

use thiserror::Error;

pub use cov::{
    extrapolate_15min, read_cov_csv, read_cov_dir, CovEvent, IntervalSeries, SensorMeta,
    SensorSpec, SensorValue, ValueKind,
};
pub use pcap::{read_pcap, CaptureRecord, PcapReader, PcapWriter};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("unsupported capture format: {0}")]
    UnsupportedFormat(String),
    #[error("pcapng files are not supported; convert to classic pcap first")]
    Pcapng,
    #[error("capture truncated after {records} complete records")]
    TruncatedFile { records: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum CovError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid value in row {row}: `{text}`")]
    Value { row: usize, text: String },
    #[error("invalid sensor-meta line {line}: `{text}`")]
    Meta { line: usize, text: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}
