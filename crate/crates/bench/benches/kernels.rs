use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spacelike_bench::{cone_points, disk, hyperboloid_jets, hyperboloid_problem};
use spacelike_core::geometry::{linearize, make_jet};
use spacelike_core::solver::{solve_k_eta, solve_lorentz_gauss};
use spacelike_core::symfun;
use spacelike_core::{Equation, Grid, SolverConfig};

fn symmetric_functions(c: &mut Criterion) {
    let mut group = c.benchmark_group("symfun");
    for n in [2, 4, 6] {
        let pts = cone_points(n, 256);
        group.bench_with_input(BenchmarkId::new("f_eta", n), &pts, |b, pts| {
            b.iter(|| pts.iter().map(|k| symfun::f_eta(black_box(k))).sum::<f64>())
        });
        group.bench_with_input(BenchmarkId::new("grad_f_eta", n), &pts, |b, pts| {
            b.iter(|| {
                pts.iter()
                    .map(|k| symfun::grad_f_eta(black_box(k))[0])
                    .sum::<f64>()
            })
        });
    }
    group.finish();
}

fn jets(c: &mut Criterion) {
    let mut group = c.benchmark_group("geometry");
    for n in [2, 3, 4] {
        let jets = hyperboloid_jets(n, 256);
        group.bench_with_input(
            BenchmarkId::new("make_jet+linearize", n),
            &jets,
            |b, jets| {
                b.iter(|| {
                    jets.iter()
                        .map(|(p, r)| {
                            linearize(&make_jet(black_box(p), black_box(r)).unwrap())
                                .unwrap()
                                .gs[0]
                        })
                        .sum::<f64>()
                })
            },
        );
    }
    group.finish();
}

fn grids(c: &mut Criterion) {
    let d = disk();
    let mut group = c.benchmark_group("grid");
    for h in [0.02, 0.01] {
        group.bench_with_input(BenchmarkId::new("build", h), &h, |b, &h| {
            b.iter(|| Grid::build(&d, black_box(h)).unwrap())
        });
    }
    group.finish();
}

fn solves(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let grid = Grid::build(&disk(), 0.04).unwrap();
    let lg =
        solve_lorentz_gauss(&hyperboloid_problem(Equation::LorentzGauss), &grid, &cfg).unwrap();
    let problem = hyperboloid_problem(Equation::KEta);
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    group.bench_function("k_eta h=0.04", |b| {
        b.iter(|| solve_k_eta(&problem, black_box(&lg.u), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, symmetric_functions, jets, grids, solves);
criterion_main!(benches);
