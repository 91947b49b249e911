//! Hot paths: the exact transport matcher, one flow step over an ensemble,
//! one measure-dependent step at realistic width, and the generator oracle.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use smflow::analysis::one_step_generator_residual;
use smflow::integrators::{ddsmf_step, smf_step, DriftOrder, FlowState};
use smflow::measures::{wasserstein2, CylindricalFunctional, EmpiricalMeasure};
use smflow::rng::RngStream;
use smflow::sgd_chain::MeasureKernel;
use smflow::{LossModel, NetworkModel, ShiftModel};
use std::hint::black_box;

fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed).rng();
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn bench_wasserstein(c: &mut Criterion) {
    let a = EmpiricalMeasure::new(random_points(128, 2, 1)).unwrap();
    let b = EmpiricalMeasure::new(random_points(128, 2, 2)).unwrap();
    c.bench_function("wasserstein2_exact_128x2d", |bench| {
        bench.iter(|| wasserstein2(black_box(&a), black_box(&b)).unwrap())
    });

    let a1 = EmpiricalMeasure::new(random_points(512, 1, 3)).unwrap();
    let b1 = EmpiricalMeasure::new(random_points(512, 1, 4)).unwrap();
    c.bench_function("wasserstein2_sorted_512x1d", |bench| {
        bench.iter(|| wasserstein2(black_box(&a1), black_box(&b1)).unwrap())
    });
}

fn bench_smf_step(c: &mut Criterion) {
    let model = ShiftModel::standard();
    let eta = 0.1;
    let dt = eta / 50.0;
    let state = FlowState::new(random_points(64, 1, 5), eta, dt).unwrap();
    let inc = model
        .data()
        .draw_increment(dt, &mut RngStream::new(6).rng())
        .unwrap();
    c.bench_function("smf_step_64_particles", |bench| {
        bench.iter(|| {
            let mut s = state.clone();
            smf_step(&model, &mut s, black_box(&inc), DriftOrder::Modified).unwrap();
            s
        })
    });
}

fn bench_ddsmf_step(c: &mut Criterion) {
    let net = NetworkModel::linear_scalar(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
    let eta = 0.05;
    let dt = eta / 100.0;
    let state = FlowState::new(random_points(256, 1, 7), eta, dt).unwrap();
    let increment = net
        .data()
        .draw_increment(dt, &mut RngStream::new(8).rng())
        .unwrap();
    c.bench_function("ddsmf_step_256_particles", |bench| {
        bench.iter(|| {
            let mut s = state.clone();
            ddsmf_step(&net, &mut s, black_box(&increment), DriftOrder::Modified).unwrap();
            s
        })
    });
}

fn bench_generator(c: &mut Criterion) {
    let net = NetworkModel::linear_scalar(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
    let phi = CylindricalFunctional::mean_power(3);
    let mu = EmpiricalMeasure::new(random_points(16, 1, 9)).unwrap();
    c.bench_function("generator_residual_16_atoms", |bench| {
        bench.iter(|| one_step_generator_residual(&net, black_box(&phi), &mu, 0.1).unwrap())
    });
}

criterion_group!(
    benches,
    bench_wasserstein,
    bench_smf_step,
    bench_ddsmf_step,
    bench_generator
);
criterion_main!(benches);
