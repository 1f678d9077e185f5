use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hierfss::exactrg::{init_potential, initial_range, rg_step, uniform_grid, GRID_POINTS};
use hierfss::lattice::resolvent;
use hierfss::pertflow::{flow, nu_c};
use hierfss::profiles::{profile_f, universal_ratio};
use hierfss::saw::saw_chi_exact;
use hierfss::{BoundaryCondition, FlowParams, LatticeSpec, MCConfig, QuadratureConfig};

fn profiles(c: &mut Criterion) {
    let cfg = QuadratureConfig::default();
    let mut group = c.benchmark_group("profiles");
    group.bench_function("profile_f n=1 s=-3", |b| {
        b.iter(|| profile_f(black_box(1.0), black_box(-3.0), &cfg).unwrap())
    });
    group.bench_function("universal_ratio n=1 p=2", |b| {
        b.iter(|| universal_ratio(black_box(1.0), 2, black_box(0.5), &cfg).unwrap())
    });
    group.finish();
}

fn lattice(c: &mut Criterion) {
    let spec = LatticeSpec::new(2, 4, 2).unwrap();
    c.bench_function("resolvent L=2 d=4 N=2", |b| {
        b.iter(|| resolvent(&spec, BoundaryCondition::Free, black_box(0.1)).unwrap())
    });
}

fn pertflow(c: &mut Criterion) {
    let p = FlowParams::new(5, 1, 2, 0.05).unwrap();
    let mut group = c.benchmark_group("pertflow");
    group.bench_function("flow 400 scales", |b| b.iter(|| flow(black_box(-0.1), 0.0, &p, 400).unwrap()));
    group.sample_size(10);
    group.bench_function("nu_c d=5", |b| b.iter(|| nu_c(&p, black_box(0.0)).unwrap()));
    group.finish();
}

fn saw(c: &mut Criterion) {
    c.bench_function("saw_chi_exact N=1e5", |b| b.iter(|| saw_chi_exact(black_box(100_000), 1e-5).unwrap()));
}

fn exactrg(c: &mut Criterion) {
    let spec = LatticeSpec::new(2, 5, 2).unwrap();
    let (g, nu) = (0.1, -0.25);
    let w0 = init_potential(g, nu, 1, &uniform_grid(initial_range(g, nu).unwrap(), GRID_POINTS)).unwrap();
    let mc = MCConfig::new(500, 7);
    let mut group = c.benchmark_group("exactrg");
    group.sample_size(10);
    group.bench_function("rg_step 500 samples", |b| b.iter(|| rg_step(&w0, 0.0, &spec, &mc).unwrap()));
    group.finish();
}

criterion_group!(benches, profiles, lattice, pertflow, saw, exactrg);
criterion_main!(benches);
