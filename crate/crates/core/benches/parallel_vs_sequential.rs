use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use edm_core::botsim::{self, ScenarioConfig};
use edm_core::par;
use edm_core::pipeline::{self, PipelineConfig};
use edm_core::stream::{self, Detector, DetectorParams, Mode, StreamObject};

fn window(n: usize) -> Vec<StreamObject> {
    let flows = botsim::generate(&ScenarioConfig {
        n_flows: n,
        ..ScenarioConfig::default()
    })
    .expect("valid scenario");
    botsim::to_stream(&flows).expect("ordered trace")
}

fn oracle(c: &mut Criterion) {
    let params = DetectorParams::default();
    let mut group = c.benchmark_group("brute_force_outliers");
    for n in [1_000usize, 4_000] {
        let objects = window(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("sequential", n), &objects, |b, o| {
            b.iter(|| stream::brute_force_outliers_sequential(black_box(o), &params))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &objects, |b, o| {
            b.iter(|| stream::brute_force_outliers_parallel(black_box(o), &params))
        });
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let params = DetectorParams::default();
    let seeds: Vec<u64> = (0..8).collect();
    let run = |&seed: &u64| {
        let flows = botsim::generate(&ScenarioConfig {
            seed,
            n_flows: 2_000,
            ..ScenarioConfig::default()
        })
        .expect("valid scenario");
        pipeline::replay(&flows, params, PipelineConfig::default(), seed)
            .expect("replay")
            .verdicts
            .len()
    };
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| seeds.iter().map(run).collect::<Vec<_>>())
    });
    group.bench_function(
        if par::is_parallel() {
            "par_map"
        } else {
            "par_map_fallback"
        },
        |b| b.iter(|| par::map(&seeds, run)),
    );
    group.finish();
}

fn insert(c: &mut Criterion) {
    let objects = window(20_000);
    let mut group = c.benchmark_group("detector_insert");
    group.throughput(Throughput::Elements(objects.len() as u64));
    for (name, mode) in [
        ("exact", Mode::Exact),
        ("approximate_32", Mode::Approximate { reservoir_size: 32 }),
    ] {
        let params = DetectorParams::new(1.0, 3, 16.0, mode);
        group.bench_function(name, |b| {
            b.iter_batched(
                || objects.clone(),
                |objs| {
                    let mut d = Detector::new(params).expect("valid params");
                    for o in objs {
                        d.insert(o).expect("ordered");
                    }
                    d.len()
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, oracle, seed_sweep, insert);
criterion_main!(benches);
