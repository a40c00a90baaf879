//! Serial versus rayon-parallel execution of the two parallel hot spots:
//! whole repetitions in the harness, and candidate evaluation in the grid
//! search. Build with `--no-default-features` to time the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stackfed::harness::{compare_strategies_with_threads, ExperimentConfig};
use stackfed::nn::{self, Batch, Matrix, ModelParams};
use stackfed::par;
use stackfed::strategies::{default_candidates, dswm_select_weight, StrategyKind};

const THREADS: [usize; 2] = [1, 4];

fn label(threads: usize) -> &'static str {
    if threads == 1 {
        "serial"
    } else {
        "parallel"
    }
}

fn experiments(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        n_samples: 1200,
        rounds: 5,
        reps: 4,
        ..Default::default()
    };
    let kinds = [StrategyKind::FedAvg, StrategyKind::Dswm];
    let mut group = c.benchmark_group("compare_4_reps");
    group.sample_size(10);
    for threads in THREADS {
        group.bench_with_input(BenchmarkId::new(label(threads), threads), &threads, |b, &t| {
            b.iter(|| compare_strategies_with_threads(black_box(&cfg), &kinds, t).unwrap())
        });
    }
    group.finish();
}

fn grid_search(c: &mut Criterion) {
    let shapes = vec![(32, 64), (64, 4)];
    let models: Vec<ModelParams> = (0..3).map(|s| nn::mlp_init(&shapes, s).unwrap()).collect();
    let refs: Vec<&ModelParams> = models.iter().collect();
    let n = 512;
    let x: Vec<f64> = (0..n * 32).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let y: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let val = Batch::new(Matrix::from_vec(n, 32, x).unwrap(), y).unwrap();
    let weights = [1.0, 0.5, 0.5];
    let candidates = default_candidates();
    let mut group = c.benchmark_group("dswm_select_weight");
    for threads in THREADS {
        group.bench_with_input(BenchmarkId::new(label(threads), threads), &threads, |b, &t| {
            b.iter(|| {
                par::with_threads(t, || {
                    dswm_select_weight(1, &refs, black_box(&weights), &val, &candidates).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, experiments, grid_search);
criterion_main!(benches);
