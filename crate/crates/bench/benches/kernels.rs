use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kinlab_bench::cloud;
use kinlab_core::boltzmann::{q_collision, AngularQuadrature, CollisionOperator, DistributionField, VelocityGrid};
use kinlab_core::estimators::{bin_f1, BinningSpec};
use kinlab_core::graphs::cluster_stats;
use kinlab_core::ursell::penrose_sweep;
use kinlab_core::{run, scatter, Vector};

fn scattering(c: &mut Criterion) {
    let (v, w) = (Vector::new2(0.3, -1.2), Vector::new2(-0.7, 0.4));
    let omega = Vector::new2(0.6, 0.8);
    c.bench_function("scatter_2d", |b| b.iter(|| scatter(black_box(v), black_box(w), black_box(omega))));
}

fn dynamics(c: &mut Criterion) {
    let (params, config) = cloud(1e-2, 1);
    c.bench_function("md_run_n100_two_mft", |b| b.iter(|| run(black_box(&config), 0.14, &params).unwrap()));
    let logs: Vec<_> = (0..8).map(|s| {
        let (p, c) = cloud(1e-2, s);
        run(&c, 0.14, &p).unwrap()
    }).collect();
    c.bench_function("cluster_stats_8_members", |b| b.iter(|| cluster_stats(black_box(&logs), 0.0, 0.14).unwrap()));
    let spec = BinningSpec::centered(2, 0.75, 6, 4.0, 4).unwrap();
    let configs: Vec<_> = (0..8).map(|s| cloud(1e-2, s).1).collect();
    c.bench_function("bin_f1_8_members", |b| b.iter(|| bin_f1(black_box(&configs), &spec, &params).unwrap()));
}

fn collision_operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("q_collision_2d");
    group.sample_size(10);
    for n in [16, 32] {
        let grid = VelocityGrid::new(2, 6.0, n).unwrap();
        let m = DistributionField::maxwellian(grid, 1.0).unwrap();
        let quad = AngularQuadrature::uniform_circle(16).unwrap();
        let op = CollisionOperator::new(grid, quad.clone()).unwrap();
        group.bench_function(format!("lattice_n{n}"), |b| b.iter(|| op.q_serial(black_box(&m.values))));
        if n == 16 {
            group.bench_function("direct_n16", |b| b.iter(|| op.q_direct(black_box(&m.values))));
        }
        group.bench_function(format!("public_n{n}"), |b| b.iter(|| q_collision(black_box(&m), &quad).unwrap()));
    }
    group.finish();
}

fn penrose(c: &mut Criterion) {
    c.bench_function("penrose_sweep_n5", |b| b.iter(|| penrose_sweep(black_box(5)).unwrap()));
}

criterion_group!(benches, scattering, dynamics, collision_operator, penrose);
criterion_main!(benches);
