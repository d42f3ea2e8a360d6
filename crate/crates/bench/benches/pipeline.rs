//! End-to-end benchmarks for the three hot paths: the grid solver sweep,
//! batched path simulation, and the barrier supersolution probe.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hjb_core::problem::{make_problem, FamilyParams};
use hjb_core::sim::{self, ControlLaw};
use hjb_core::solver::{self, GridSpec};
use hjb_core::{barrier, policy};
use std::sync::Arc;

fn bench_solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    for &h in &[0.1, 0.05, 0.025] {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let steps = solver::min_time_steps(&spec, h, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&spec, steps, h, 0.0, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("backward_sweep", h), &h, |b, _| {
            b.iter(|| solver::solve(&spec, &grid, 0.0, &spec.controls).unwrap())
        });
    }
    group.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    let spec = make_problem("jump_diffusion_ball", FamilyParams::default()).unwrap();
    let law = ControlLaw::Constant(spec.controls.enumerate(1).remove(0));
    for &n_paths in &[256usize, 1024, 4096] {
        group.bench_with_input(BenchmarkId::new("exit_batch", n_paths), &n_paths, |b, &n| {
            b.iter(|| sim::estimate_cost(&spec, &law, 0.0, &[0.1, 0.0], n, 0.01, 7).unwrap())
        });
    }
    group.finish();
}

fn bench_policy_synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("policy");
    group.sample_size(10);
    let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
    let steps = solver::min_time_steps(&spec, 0.05, 0.0, 0.0).unwrap();
    let grid = GridSpec::new(&spec, steps, 0.05, 0.0, 0.0).unwrap();
    let field = Arc::new(solver::solve(&spec, &grid, 0.0, &spec.controls).unwrap());
    for &slabs in &[10usize, 50] {
        let field = Arc::clone(&field);
        group.bench_with_input(BenchmarkId::new("synthesize", slabs), &slabs, |b, &m| {
            b.iter(|| policy::synthesize(&field, &spec, m, 0.05).unwrap())
        });
    }
    group.finish();
}

fn bench_barrier(c: &mut Criterion) {
    let mut group = c.benchmark_group("barrier");
    group.sample_size(10);
    let spec = make_problem("jump_diffusion_ball", FamilyParams::default()).unwrap();
    let bar = barrier::build_barrier(&spec, &spec.domain).unwrap();
    group.bench_function("build", |b| {
        b.iter(|| barrier::build_barrier(&spec, &spec.domain).unwrap())
    });
    group.bench_function("supersolution_probe_1000", |b| {
        b.iter(|| barrier::supersolution_probe(&bar, &spec, 1000, 5))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_solver,
    bench_simulation,
    bench_policy_synthesis,
    bench_barrier
);
criterion_main!(benches);
