use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nsqstab::block::{
    enumerate_full_selections, full_squared_matrices, DEFAULT_SELECTION_CAP as CAP,
};
use nsqstab::dus::{sweep_condition, SamplerConfig};
use nsqstab::linalg::eigenvalues;
use nsqstab::lyapunov::find_common_d;
use nsqstab::{BlockStructure, GainMatrix, SolverOptions, Tolerances};
use nsqstab_bench::plant;

fn bench_eigenvalues(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigenvalues");
    for m in [4, 8, 16] {
        let a = plant(&vec![1; m]);
        g.bench_with_input(BenchmarkId::from_parameter(m), a.data(), |b, mat| {
            b.iter(|| eigenvalues(mat).unwrap())
        });
    }
    g.finish();
}

fn bench_enumeration(c: &mut Criterion) {
    let s = BlockStructure::new(vec![3, 3, 3, 3, 3]).unwrap();
    c.bench_function("enumerate_full_selections/3^5", |b| {
        b.iter(|| enumerate_full_selections(&s, CAP).unwrap())
    });
}

fn bench_common_d(c: &mut Criterion) {
    let tol = Tolerances::default();
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("find_common_d");
    g.sample_size(20);
    for sizes in [vec![2, 2], vec![2, 3, 2], vec![3, 3, 3]] {
        let mats = full_squared_matrices(&plant(&sizes), CAP).unwrap();
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{sizes:?}")),
            &mats,
            |b, mats| b.iter(|| find_common_d(mats, &opts, &tol).unwrap()),
        );
    }
    g.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let tol = Tolerances::default();
    let a = plant(&[2, 3, 2]);
    let k = GainMatrix::ones(a.structure());
    let sampler = SamplerConfig::new(200, 7);
    let mut g = c.benchmark_group("sweep_condition");
    g.sample_size(20);
    g.bench_function("[2, 3, 2] x 200", |b| {
        b.iter(|| sweep_condition(&a, &k, &sampler, CAP, &tol).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_eigenvalues,
    bench_enumeration,
    bench_common_d,
    bench_sweep
);
criterion_main!(benches);
