use std::hint::black_box;

use bubble_reduction_bench::fixture;
use bubble_reduction_core::expansion::{b4_limit, default_b4_sequence};
use bubble_reduction_core::linearized::assemble;
use bubble_reduction_core::quadrature::{build_sector_grid, build_sector_grid_with, sample_points, GridOptions};
use bubble_reduction_core::{
    compute_constants, find_critical_point, norm_dstar, residual_eval, HalfSpacePoint, KProfile,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn constants(c: &mut Criterion) {
    let (params, _) = fixture(8);
    c.bench_function("compute_constants", |b| {
        b.iter(|| compute_constants(black_box(&params)).unwrap())
    });
    c.bench_function("b4_limit N=5", |b| {
        b.iter(|| b4_limit(5, black_box(&default_b4_sequence())).unwrap())
    });
    let constants = compute_constants(&params).unwrap();
    c.bench_function("critical_point k=64", |b| {
        b.iter(|| find_critical_point(&constants, &params, black_box(64)).unwrap())
    });
}

fn residual(c: &mut Criterion) {
    let (params, config) = fixture(16);
    let profile = KProfile::local_max(&params);
    c.bench_function("residual_dstar k=16", |b| {
        b.iter(|| {
            let grid = build_sector_grid(&config, 1).unwrap();
            let samples: Vec<(HalfSpacePoint, f64)> = sample_points(&grid, &config, 16)
                .into_iter()
                .map(|z| {
                    let p = HalfSpacePoint::boundary(z);
                    let r = residual_eval(&config, &profile, &p);
                    (p, r)
                })
                .collect();
            norm_dstar(&config, &params, &samples).unwrap()
        })
    });
}

fn collocation(c: &mut Criterion) {
    let (params, config) = fixture(8);
    let profile = KProfile::local_max(&params);
    let grid = build_sector_grid_with(&config, &GridOptions::collocation(1).unwrap()).unwrap();
    let mut group = c.benchmark_group("collocation");
    group.sample_size(10);
    group.bench_function("assemble k=8", |b| {
        b.iter(|| assemble(&params, &config, &profile, &grid).unwrap())
    });
    group.finish();
}

criterion_group!(benches, constants, residual, collocation);
criterion_main!(benches);
