//! Sequential vs data-parallel kernel timings. Both implementations use
//! the same accumulation order, so they agree bit-for-bit; this suite
//! measures what the fork/join overhead buys at training-relevant shapes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fairvae::backend::{par, seq};
use fairvae::regularizers::{rff_expand, RffProjection};
use fairvae::rng::RandomStream;
use fairvae::tensor::Tensor;

fn matmul(c: &mut Criterion) {
    let mut rng = RandomStream::seed(7);
    let mut group = c.benchmark_group("matmul_nn");
    for &n in &[64usize, 192] {
        let a = rng.standard_normal(vec![n, n]);
        let b = rng.standard_normal(vec![n, n]);
        group.bench_with_input(BenchmarkId::new("seq", n), &(), |bench, ()| {
            bench.iter(|| seq::matmul_nn(black_box(&a), black_box(&b)))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &(), |bench, ()| {
            bench.iter(|| par::matmul_nn(black_box(&a), black_box(&b)))
        });
    }
    group.finish();
}

fn pairwise_distances(c: &mut Criterion) {
    let mut rng = RandomStream::seed(8);
    let mut group = c.benchmark_group("pairwise_sqdist");
    for &(n, d) in &[(128usize, 32usize), (512, 64)] {
        let a = rng.standard_normal(vec![n, d]);
        let b = rng.standard_normal(vec![n / 2, d]);
        let id = format!("{n}x{d}");
        group.bench_with_input(BenchmarkId::new("seq", &id), &(), |bench, ()| {
            bench.iter(|| seq::pairwise_sqdist(black_box(&a), black_box(&b)))
        });
        group.bench_with_input(BenchmarkId::new("par", &id), &(), |bench, ()| {
            bench.iter(|| par::pairwise_sqdist(black_box(&a), black_box(&b)))
        });
    }
    group.finish();
}

fn mixture_density(c: &mut Criterion) {
    let mut rng = RandomStream::seed(9);
    let n = 256;
    let k = 50;
    let d = 50;
    let z = rng.standard_normal(vec![n, d]);
    let mu = rng.standard_normal(vec![k, d]);
    let sigma = rng.uniform_tensor(vec![k, d], 0.5, 1.5);
    let upstream = rng.standard_normal(vec![n, k]);

    let mut group = c.benchmark_group("component_logpdf");
    group.bench_function("seq", |bench| {
        bench.iter(|| seq::pairwise_gauss_logpdf(black_box(&z), black_box(&mu), black_box(&sigma)))
    });
    group.bench_function("par", |bench| {
        bench.iter(|| par::pairwise_gauss_logpdf(black_box(&z), black_box(&mu), black_box(&sigma)))
    });
    group.bench_function("grad_z/seq", |bench| {
        bench.iter(|| {
            seq::pairwise_gauss_logpdf_grad_z(
                black_box(&upstream),
                black_box(&z),
                black_box(&mu),
                black_box(&sigma),
            )
        })
    });
    group.bench_function("grad_z/par", |bench| {
        bench.iter(|| {
            par::pairwise_gauss_logpdf_grad_z(
                black_box(&upstream),
                black_box(&z),
                black_box(&mu),
                black_box(&sigma),
            )
        })
    });
    group.finish();
}

fn random_features(c: &mut Criterion) {
    // End-to-end dispatching path: cos(zW^T + b) at audit-sized shapes.
    let mut rng = RandomStream::seed(10);
    let proj = RffProjection::sample(50, 500, RffProjection::default_gamma(50), &mut rng).unwrap();
    let z: Tensor = rng.standard_normal(vec![512, 50]);
    c.bench_function("rff_expand/dispatch", |bench| {
        bench.iter(|| rff_expand(black_box(&z), black_box(&proj)).unwrap())
    });
}

criterion_group!(backends, matmul, pairwise_distances, mixture_density, random_features);
criterion_main!(backends);
