use std::hint::black_box;

use bacscope_bench::{decode, table1_frames};
use bacscope_core::codec::parse_frame;
use bacscope_core::flow::ClassifyConfig;
use bacscope_core::flowmap::{build_flow_map, LiveChecker, MapConfig};
use bacscope_core::graph::{build_graph, export_gexf, LayerFilter};
use bacscope_core::scoring::{score_day, ScoringConfig};
use bacscope_core::synth;
use bacscope_core::{FlowTable, Timestamp};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn parsing(c: &mut Criterion) {
    let frames = table1_frames(10_000);
    let mut g = c.benchmark_group("parse");
    g.throughput(Throughput::Elements(frames.len() as u64));
    g.bench_function("parse_frame", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(parse_frame(black_box(&f.frame), f.timestamp).ok());
            }
        })
    });
    g.finish();
}

fn flows(c: &mut Criterion) {
    let packets = decode(&table1_frames(100_000));
    let cfg = ClassifyConfig::default();
    let mut g = c.benchmark_group("flows");
    g.sample_size(20);
    g.throughput(Throughput::Elements(packets.len() as u64));
    g.bench_function("flow_table_1e5", |b| {
        b.iter(|| FlowTable::from_packets(black_box(&packets), &cfg))
    });
    let map = build_flow_map(&packets, &MapConfig::default(), Timestamp::default()).unwrap();
    g.bench_function("live_check_1e5", |b| {
        b.iter_batched(
            || LiveChecker::new(&map),
            |mut live| {
                for p in &packets {
                    black_box(live.check(p));
                }
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();

    let table = FlowTable::from_packets(&packets, &cfg);
    c.bench_function("graph/gexf_export", |b| {
        b.iter(|| export_gexf(&build_graph(black_box(&table), LayerFilter::Both)))
    });
}

fn scoring(c: &mut Criterion) {
    let cfg = ScoringConfig::default();
    let fixture = synth::stuck_thermometer(cfg.history_days, 3);
    let mut g = c.benchmark_group("scoring");
    g.sample_size(20);
    g.bench_function("score_day_stuck_thermometer", |b| {
        b.iter(|| {
            score_day(
                &fixture.meta,
                black_box(&fixture.events),
                fixture.day,
                &cfg,
                fixture.tz,
            )
        })
    });
    g.finish();
}

criterion_group!(benches, parsing, flows, scoring);
criterion_main!(benches);
