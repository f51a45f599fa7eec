//! Sequential vs rayon-parallel execution of the embarrassingly parallel
//! workloads: oracle solves, root sign scans and a short seed sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalegan_core::oracle::{count_sign_changes, random_pair, solve_optimal_discriminator};
use scalegan_core::par::Execution;
use scalegan_core::sweep::{run_sweep, SweepOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn oracle_solves(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs: Vec<_> = (0..64).map(|_| random_pair(&mut rng).unwrap()).collect();
    let mut group = c.benchmark_group("oracle_solves");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, pairs.len()), |b| {
            b.iter(|| exec.map(&pairs, |(p, q)| solve_optimal_discriminator(p, q, 0.0027).unwrap().c))
        });
    }
    group.finish();
}

fn sign_scans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(f64, f64, f64)> = (0..32)
        .map(|_| (rng.gen_range(0.05..20.0), rng.gen_range(0.01..0.99), rng.gen_range(0.0..0.05)))
        .collect();
    let mut group = c.benchmark_group("sign_scans");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, cases.len()), |b| {
            b.iter(|| exec.map(&cases, |&(r, c, l)| count_sign_changes(r, c, l, 100_000)))
        });
    }
    group.finish();
}

fn short_sweep(c: &mut Criterion) {
    let root = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("sweep_fixed_scales");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = SweepOptions {
            seeds: vec![0, 1],
            overrides: ["iterations=50", "hidden=16", "eval.every=50", "eval.samples=100", "checkpoint_every=0"]
                .map(String::from)
                .to_vec(),
            jobs: None,
            execution: exec,
        };
        group.bench_function(name, |b| b.iter(|| run_sweep("fixed-scales", &root.path().join(name), &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, oracle_solves, sign_scans, short_sweep);
criterion_main!(benches);
