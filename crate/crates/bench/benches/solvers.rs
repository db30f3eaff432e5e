use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use superbsde_bench::{affine_cube, paths, step_problem};
use superbsde_core::forward::{simulate, TimeGrid};
use superbsde_core::mcsolver::{solve_mc, McConfig};
use superbsde_core::pde::{solve_pde, PdeConfig};
use superbsde_core::supconv::{sup_convolve, SupConvConfig};

fn forward(c: &mut Criterion) {
    let p = affine_cube();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    c.bench_function("simulate 10k x 50", |b| {
        b.iter(|| simulate(&p.forward, grid, black_box(10_000), 1).unwrap())
    });
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    group.sample_size(10);
    // The step needs a finer time grid to satisfy the CFL condition.
    for (name, p, n_t) in [("affine", affine_cube(), 4000), ("step", step_problem(), 12_000)] {
        let ens = paths(&p, 20_000, 50);
        let cfg = McConfig::new(40);
        group.bench_function(format!("mc {name} 20k x 50"), |b| b.iter(|| solve_mc(&p, &ens, &cfg).unwrap().y0));
        let pde = PdeConfig::auto_domain(&p, 6.0, 400, n_t).unwrap();
        group.bench_function(format!("pde {name} 400 x {n_t}"), |b| b.iter(|| solve_pde(&p, &pde).unwrap().u0_at(0.0)));
    }
    group.finish();
}

fn supconv(c: &mut Criterion) {
    let p = step_problem();
    let cfg = SupConvConfig::new(16.0, 1e-3, &p.growth);
    c.bench_function("supconv step n=16", |b| {
        b.iter(|| sup_convolve(&p.terminal, &cfg, black_box(-0.03)).unwrap().value)
    });
}

criterion_group!(benches, forward, backward, supconv);
criterion_main!(benches);
