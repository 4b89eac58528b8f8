//! Benchmarks of the hot paths: the overlap predictor, the partition
//! search (against the brute-force oracle it must match), the runtime
//! simulator, and the advisor pipeline end to end.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use autopar::config::{AnalysisConfig, SearchParams};
use autopar::driver::explore_call_tree;
use autopar::fixtures::{self, random_conjuncts, random_overheads};
use autopar::oracle::{brute_force_best, simulate_execution, Engines};
use autopar::overlap::{find_par_time, OverheadParams, ParConjunct};
use autopar::planner::{find_best_partition, region_time, AbstractSource};

/// The first seeded random conjunction with exactly `n` conjuncts, and
/// its overheads.
fn conjunction_of(n: usize) -> (Vec<ParConjunct>, OverheadParams) {
    for seed in 0u64.. {
        let conjs = random_conjuncts(seed, n);
        if conjs.len() == n {
            return (conjs, random_overheads(seed));
        }
    }
    unreachable!()
}

fn predictor(c: &mut Criterion) {
    let (conjs, o) = conjunction_of(8);
    c.bench_function("predict/random_n8", |b| {
        b.iter(|| find_par_time(black_box(&conjs), black_box(&o)).unwrap())
    });
}

fn search(c: &mut Criterion) {
    let (conjs, o) = conjunction_of(8);
    let n = conjs.len();
    let src = AbstractSource::new(conjs).unwrap();
    let exhaustive = SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: false };
    let pruned = SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: true };
    c.bench_function("search/exhaustive_n8", |b| {
        b.iter(|| find_best_partition(black_box(&src), (0, n), &o, &exhaustive).unwrap())
    });
    c.bench_function("search/pruned_n8", |b| {
        b.iter(|| find_best_partition(black_box(&src), (0, n), &o, &pruned).unwrap())
    });
    c.bench_function("search/brute_force_n8", |b| {
        b.iter(|| brute_force_best(n, |p| region_time(black_box(&src), p, &o)).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let (conjs, o) = conjunction_of(8);
    c.bench_function("simulate/unlimited_n8", |b| {
        b.iter(|| simulate_execution(black_box(&conjs), &o, Engines::Unlimited).unwrap())
    });
    c.bench_function("simulate/four_engines_n8", |b| {
        b.iter(|| simulate_execution(black_box(&conjs), &o, Engines::Fixed(4)).unwrap())
    });
}

fn advisor(c: &mut Criterion) {
    let config = AnalysisConfig::default();
    let f = fixtures::map_foldl();
    c.bench_function("advise/map_foldl", |b| {
        b.iter(|| explore_call_tree(black_box(&f.program), &f.profile, &config).unwrap())
    });
    let r = fixtures::random_program(11);
    c.bench_function("advise/random_program", |b| {
        b.iter(|| explore_call_tree(black_box(&r.program), &r.profile, &config).unwrap())
    });
}

criterion_group!(benches, predictor, search, simulator, advisor);
criterion_main!(benches);
