use std::hint::black_box;

use chs_core::grid::{laplacian_neumann, RieszSolver, RIESZ_TOL};
use chs_core::study::build_initial;
use chs_core::{step, Field, Grid, StudyConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn wavy(grid: Grid) -> Field {
    Field::from_fn(grid, |x| (3.0 * x[0]).sin() * (2.0 * x[1] + 0.3).cos() + x[2])
}

fn backward_euler_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for n in [64, 128, 256] {
        let mut cfg = StudyConfig::default();
        cfg.grid = Grid::line(n, 1.0).unwrap();
        let init = build_initial(&cfg, cfg.grid, &cfg.params).unwrap();
        group.bench_with_input(BenchmarkId::new("default-preset", n), &init, |b, s| {
            b.iter(|| step(black_box(s), &cfg.params, &cfg.solve).unwrap())
        });
    }
    group.finish();
}

fn riesz(c: &mut Criterion) {
    let mut group = c.benchmark_group("riesz-solve");
    for grid in [Grid::line(128, 1.0).unwrap(), Grid::new(&[48, 48], &[1.0, 1.0]).unwrap()] {
        let solver = RieszSolver::new(grid);
        let f = wavy(grid);
        group.bench_with_input(BenchmarkId::from_parameter(grid.len()), &f, |b, f| {
            b.iter(|| solver.solve(black_box(f), RIESZ_TOL).unwrap())
        });
    }
    group.finish();
}

fn laplacian(c: &mut Criterion) {
    let grid = Grid::new(&[128, 128], &[1.0, 1.0]).unwrap();
    let u = wavy(grid);
    c.bench_function("laplacian-128x128", |b| b.iter(|| laplacian_neumann(black_box(&u))));
}

criterion_group!(benches, backward_euler_step, riesz, laplacian);
criterion_main!(benches);
