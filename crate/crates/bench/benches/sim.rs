use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use qos_bench::half_load_config;
use qos_core::metrics::{mean_abs_jitter_with, DelaySeries};
use qos_core::sim::{simulate_run, simulate_summary};
use qos_core::trace::{synth_mobility_trace, MobilityScenario};

fn event_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    for packets in [10_000u64, 100_000] {
        let config = half_load_config(packets);
        group.throughput(Throughput::Elements(packets));
        group.bench_with_input(BenchmarkId::new("summary", packets), &config, |b, cfg| {
            b.iter(|| simulate_summary(cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("records", packets), &config, |b, cfg| {
            b.iter(|| simulate_run(cfg).unwrap())
        });
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let (records, _) = simulate_run(&half_load_config(50_000)).unwrap();
    let delays = DelaySeries::new(records.iter().filter_map(|r| r.sojourn).collect()).unwrap();
    c.bench_function("mean_abs_jitter_bootstrap_100", |b| {
        b.iter(|| mean_abs_jitter_with(&delays, 100, 1).unwrap())
    });
}

fn synth(c: &mut Criterion) {
    let scenario = MobilityScenario::constant_speed(50.0, 60);
    c.bench_function("synth_60s", |b| b.iter(|| synth_mobility_trace(&scenario).unwrap()));
}

criterion_group!(benches, event_loop, estimators, synth);
criterion_main!(benches);
