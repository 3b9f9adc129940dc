use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use mvsfde_bench::cloud;
use mvsfde_core::measures::{wasserstein_1d, wasserstein_exact_small, wasserstein_sliced};
use mvsfde_core::EmpiricalMeasure;

fn bench_sorted(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein_1d");
    for n in [256usize, 2048] {
        let a = EmpiricalMeasure::new(1, cloud(n, 1, 1)).unwrap();
        let b = EmpiricalMeasure::new(1, cloud(n, 1, 2)).unwrap();
        group.bench_function(format!("n{n}"), |bch| {
            bch.iter(|| black_box(wasserstein_1d(2.0, &a, &b).unwrap()));
        });
    }
    group.finish();
}

fn bench_assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein_exact");
    group.sample_size(20);
    for n in [64usize, 256] {
        let a = EmpiricalMeasure::new(2, cloud(n, 2, 3)).unwrap();
        let b = EmpiricalMeasure::new(2, cloud(n, 2, 4)).unwrap();
        group.bench_function(format!("dim2_n{n}"), |bch| {
            bch.iter(|| black_box(wasserstein_exact_small(2.0, &a, &b).unwrap()));
        });
    }
    group.finish();
}

fn bench_sliced(c: &mut Criterion) {
    let n = 2048;
    let a = EmpiricalMeasure::new(3, cloud(n, 3, 5)).unwrap();
    let b = EmpiricalMeasure::new(3, cloud(n, 3, 6)).unwrap();
    c.bench_function("wasserstein_sliced_dim3_n2048", |bch| {
        bch.iter(|| black_box(wasserstein_sliced(2.0, &a, &b, 64).unwrap()));
    });
}

criterion_group!(benches, bench_sorted, bench_assignment, bench_sliced);
criterion_main!(benches);
