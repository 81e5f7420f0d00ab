use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bacscope_cli::commands;
use bacscope_cli::config::{AppConfig, Overrides};
use bacscope_core::graph::LayerFilter;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

/// BACnet/IP traffic analyzer.
#[derive(Debug, Parser)]
#[command(name = "bacscope", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// Log filter, e.g. `debug` or `bacscope_cli=trace`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the flow map and baseline from sample captures.
    Analyze {
        captures: Vec<PathBuf>,
        /// Flow table CSV; stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check captures against the baseline and emit anomalies as NDJSON.
    Check {
        captures: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the communication graph as GEXF, from captures or the baseline.
    ExportGexf {
        captures: Vec<PathBuf>,
        #[arg(long, default_value = "both")]
        layer: LayerFilter,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one day of sensor logs into a weighted tree.
    Score {
        day: NaiveDate,
        #[arg(long)]
        cov_dir: Option<PathBuf>,
        #[arg(long)]
        sensor_meta: Option<PathBuf>,
        /// Output file; defaults to `trees_dir/DAY.json`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold a new day of captures into the baseline and print the delta.
    Regenerate { captures: Vec<PathBuf> },
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn with_captures(cfg: &AppConfig, given: Vec<PathBuf>) -> Vec<PathBuf> {
    if given.is_empty() {
        cfg.captures.clone()
    } else {
        given
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Analyze { captures, csv } => {
            let captures = with_captures(&cfg, captures);
            let summary = commands::analyze(&cfg, &captures, output(&csv)?)?;
            let i = &summary.ingested;
            eprintln!(
                "{} records, {} BACnet packets ({} malformed, {} not BACnet), {} flows; baseline written",
                i.records,
                i.packets.len(),
                i.malformed,
                i.not_bacnet,
                summary.baseline.flow_map.flows.len()
            );
        }
        Command::Check { captures, out } => {
            let captures = with_captures(&cfg, captures);
            let s = commands::check(&cfg, &captures, output(&out)?)?;
            eprintln!(
                "{} packets: {} ok, {} anomalous-timing, {} anomalous-length, {} unknown-flow, {} unclassified-flow",
                s.packets, s.ok, s.anomalous_timing, s.anomalous_length, s.unknown_flow, s.unclassified_flow
            );
        }
        Command::ExportGexf {
            captures,
            layer,
            out,
        } => {
            let g = commands::export(&cfg, &captures, layer, output(&out)?)?;
            eprintln!("{} nodes, {} edges", g.nodes.len(), g.edges.len());
        }
        Command::Score {
            day,
            cov_dir,
            sensor_meta,
            out,
        } => {
            if cov_dir.is_some() {
                cfg.cov_dir = cov_dir;
            }
            if sensor_meta.is_some() {
                cfg.sensor_meta = sensor_meta;
            }
            let tree = commands::score(&cfg, day)?;
            match (&out, &cfg.trees_dir) {
                (None, Some(dir)) => {
                    let path = commands::store_tree(dir, &tree)?;
                    eprintln!("wrote {}", path.display());
                }
                _ => commands::write_tree(&tree, output(&out)?)?,
            }
        }
        Command::Regenerate { captures } => {
            let captures = with_captures(&cfg, captures);
            let delta = commands::regenerate(&cfg, &captures)?;
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &delta)?;
            writeln!(out)?;
        }
        Command::Serve { listen } => {
            if let Some(l) = listen {
                cfg.listen = l;
            }
            tokio::runtime::Runtime::new()?.block_on(bacscope_cli::server::serve(cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
