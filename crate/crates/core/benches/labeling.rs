//! Dataset labeling on the worker pool vs the single-threaded reference.
//! Build with `--no-default-features` to compile the pool out entirely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use surro2sp_core::alternating::stream;
use surro2sp_core::grid::{parse_instance, GridOptions, GridProblem, CASE5_SYNTHETIC};
use surro2sp_core::two_stage::{label_dataset, label_dataset_sequential, EvalOptions, TwoStageProblem};

fn labeling(c: &mut Criterion) {
    let inst = parse_instance(CASE5_SYNTHETIC).unwrap().truncated(6).unwrap();
    let p = GridProblem::new(inst, GridOptions::default()).unwrap();
    let scenarios = p.sample_scenarios(20, 1).unwrap();
    let xs = p.polytope().sample_uniform(32, &mut stream(1, "bench")).unwrap();
    let opts = EvalOptions::default();

    let mut group = c.benchmark_group("label_32x20");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| label_dataset_sequential(&p, black_box(&xs), &scenarios, &opts).unwrap())
    });
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    for threads in [1, 2, 4].into_iter().filter(|&t| t == 1 || t <= max.max(2)) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        group.bench_with_input(BenchmarkId::new("pool", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| label_dataset(&p, black_box(&xs), &scenarios, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, labeling);
criterion_main!(benches);
