use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bacscope_cli::commands::{self, CommandError};
use bacscope_cli::config::AppConfig;
use bacscope_core::capture::PcapWriter;
use bacscope_core::codec::{BacnetIpAddress, FrameBuilder};
use bacscope_core::flowmap::{AnomalyRecord, MapError, VerdictKind};
use bacscope_core::graph::LayerFilter;
use bacscope_core::synth::{self, SyntheticFrame};
use bacscope_core::Timestamp;

fn write_pcap(path: &Path, frames: &[SyntheticFrame]) {
    let mut w = PcapWriter::create(path, false).unwrap();
    for f in frames {
        w.write_record(f.timestamp, &f.frame).unwrap();
    }
    w.into_inner().unwrap();
}

fn setup(dir: &Path) -> (AppConfig, PathBuf) {
    let capture = dir.join("sample.pcap");
    write_pcap(&capture, &synth::table1_stream(3_000, 21));
    let cfg = AppConfig {
        baseline: Some(dir.join("baseline.json")),
        ..AppConfig::default()
    };
    (cfg, capture)
}

#[test]
fn analyze_writes_table1_csv_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    let mut csv = Vec::new();
    commands::analyze(&cfg, std::slice::from_ref(&capture), &mut csv).unwrap();
    let first_baseline = fs::read(cfg.baseline.as_ref().unwrap()).unwrap();

    let text = String::from_utf8(csv.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "source,destination,layer,type,count,tau,sigma,class"
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for spec in synth::table1_flows() {
        let row = rows
            .iter()
            .find(|r| {
                r[0] == spec.src_address().to_string()
                    && r[1] == spec.dst_address().to_string()
                    && r[3] == format!("0x{:02x}", spec.pdu_type)
            })
            .unwrap_or_else(|| panic!("no row for {:?}", spec.src));
        let tau: f64 = row[5].parse().unwrap();
        assert!((tau - spec.tau).abs() / spec.tau < 0.1, "{row:?}");
    }

    let mut again = Vec::new();
    commands::analyze(&cfg, &[capture], &mut again).unwrap();
    assert_eq!(csv, again);
    assert_eq!(
        first_baseline,
        fs::read(cfg.baseline.as_ref().unwrap()).unwrap()
    );
}

#[test]
fn analyze_without_captures_or_packets_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    assert!(matches!(
        commands::analyze(&cfg, &[], Vec::new()),
        Err(CommandError::NoCaptures)
    ));
    let empty = dir.path().join("empty.pcap");
    write_pcap(&empty, &[]);
    assert!(matches!(
        commands::analyze(&cfg, &[empty], Vec::new()),
        Err(CommandError::Map(MapError::EmptySample))
    ));
}

#[test]
fn truncated_capture_keeps_complete_records() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    let cut = dir.path().join("cut.pcap");
    let bytes = fs::read(&capture).unwrap();
    fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let summary = commands::analyze(&cfg, &[capture, cut], Vec::new()).unwrap();
    assert_eq!(summary.ingested.truncated_files, 1);
    assert!(summary.ingested.packets.len() > 10_000);
}

#[test]
fn check_reports_every_packet_of_a_new_device() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, capture) = setup(dir.path());
    commands::analyze(&cfg, &[capture], Vec::new()).unwrap();
    cfg.anomaly_log = Some(dir.path().join("anomalies.ndjson"));

    let builder = FrameBuilder::new(
        BacnetIpAddress::new([192, 168, 10, 1].into(), 47808),
        BacnetIpAddress::new([192, 168, 10, 2].into(), 47808),
    );
    let intruder: Vec<SyntheticFrame> = (0..25)
        .map(|i| SyntheticFrame {
            timestamp: Timestamp::from_parts(1_500_000_000 + i, 0),
            frame: builder.build(&synth::routed_bvll(
                [0xee, 0x01],
                [0x73, 0xc3],
                0x0,
                i as u8,
            )),
        })
        .collect();
    let path = dir.path().join("intruder.pcap");
    write_pcap(&path, &intruder);

    let mut out = Vec::new();
    let summary = commands::check(&cfg, &[path], &mut out).unwrap();
    assert_eq!(summary.unknown_flow, 25);
    let records: Vec<AnomalyRecord> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 25);
    assert!(records.iter().all(|r| r.kind == VerdictKind::UnknownFlow));
    assert_eq!(records.first().unwrap().id, 1);

    // The log holds exactly what was streamed.
    let logged = fs::read_to_string(cfg.anomaly_log.as_ref().unwrap()).unwrap();
    assert_eq!(logged.lines().count(), 25);
}

#[test]
fn check_on_empty_capture_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    commands::analyze(&cfg, &[capture], Vec::new()).unwrap();
    let empty = dir.path().join("empty.pcap");
    write_pcap(&empty, &[]);
    let mut out = Vec::new();
    let s = commands::check(&cfg, &[empty], &mut out).unwrap();
    assert_eq!(s.packets, 0);
    assert!(out.is_empty());
}

#[test]
fn check_without_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    assert!(matches!(
        commands::check(&cfg, &[capture], Vec::new()),
        Err(CommandError::Baseline(..))
    ));
    fs::write(cfg.baseline.as_ref().unwrap(), "{ not json").unwrap();
    assert!(commands::check(&cfg, &[], Vec::new()).is_err());
}

#[test]
fn gexf_export_from_capture_and_baseline_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    commands::analyze(&cfg, std::slice::from_ref(&capture), Vec::new()).unwrap();
    let mut from_capture = Vec::new();
    let g = commands::export(&cfg, &[capture], LayerFilter::Both, &mut from_capture).unwrap();
    let mut from_baseline = Vec::new();
    commands::export(&cfg, &[], LayerFilter::Both, &mut from_baseline).unwrap();
    assert_eq!(from_capture, from_baseline);
    assert_eq!((g.nodes.len(), g.edges.len()), (4, 5));
}

#[test]
fn regenerate_issues_delta_for_new_device() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, capture) = setup(dir.path());
    commands::analyze(&cfg, &[capture], Vec::new()).unwrap();
    let mut flows = synth::table1_flows();
    flows.push(synth::FlowSpec {
        src: [0xaa, 0x02],
        dst: [0x73, 0xc3],
        pdu_type: 0x0,
        tau: 10.0,
        sigma: 0.5,
        pattern: bacscope_core::Pattern::Periodic,
    });
    let day = synth::flow_stream(
        &flows,
        &[300, 300, 300, 300, 10, 30],
        Timestamp::from_parts(1_425_400_000, 0),
        22,
    );
    let path = dir.path().join("day2.pcap");
    write_pcap(&path, &day);
    let delta = commands::regenerate(&cfg, &[path]).unwrap();
    assert_eq!(delta.generation, 1);
    assert_eq!(delta.new_nodes.len(), 1);
    assert_eq!(delta.new_edges.len(), 1);
}

#[test]
fn score_needs_sensor_logs() {
    let cfg = AppConfig::default();
    assert!(matches!(
        commands::score(&cfg, "2015-03-09".parse().unwrap()),
        Err(CommandError::NoSensorLogs)
    ));
}

fn bacscope() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bacscope"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, capture) = setup(dir.path());
    let conf = dir.path().join("bacscope.conf");
    fs::write(&conf, "baseline = state.json\nthreshold = 0.01\n").unwrap();

    let ok = bacscope()
        .args(["analyze", "--config"])
        .arg(&conf)
        .arg("--csv")
        .arg(dir.path().join("flows.csv"))
        .arg(&capture)
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(dir.path().join("state.json").exists());

    let empty = bacscope()
        .args(["analyze", "--config"])
        .arg(&conf)
        .output()
        .unwrap();
    assert_eq!(empty.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("no capture files"));

    let bad_flag = bacscope()
        .args(["check", "--config"])
        .arg(&conf)
        .args(["--threshold", "2"])
        .arg(&capture)
        .output()
        .unwrap();
    assert_eq!(bad_flag.status.code(), Some(1));

    let check = bacscope()
        .args(["check", "--config"])
        .arg(&conf)
        .arg(&capture)
        .output()
        .unwrap();
    assert!(check.status.success());
    assert!(String::from_utf8_lossy(&check.stderr).contains("packets:"));
}
