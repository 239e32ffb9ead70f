//! Benchmarks for the three hot paths: the exact cubic-subproblem solver,
//! phase-retrieval Hessian assembly vs. Hessian-vector products, and the
//! closed-form factor-set distance used by every matrix-recovery iteration.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cubicreg::subproblem::{solve_cubic, CubicModel};
use cubicreg::{matrix_recovery, phase_retrieval};

fn random_model(n: usize, seed: u64) -> CubicModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = (&raw + raw.transpose()).scale(0.5);
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    CubicModel::new(g, h, 0.5).unwrap()
}

fn bench_solve_cubic(c: &mut Criterion) {
    let model = random_model(32, 7);
    c.bench_function("solve_cubic_n32", |b| {
        b.iter(|| solve_cubic(std::hint::black_box(&model), 1e-10).unwrap())
    });
}

fn bench_phase_retrieval_oracle(c: &mut Criterion) {
    let instance = phase_retrieval::generate_instance(16, 3).unwrap();
    let oracle = instance.oracle();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = DVector::from_fn(32, |_, _| rng.gen_range(-1.0..1.0));
    let v = DVector::from_fn(32, |_, _| rng.gen_range(-1.0..1.0));
    c.bench_function("phase_retrieval_hessian_n16", |b| {
        b.iter(|| cubicreg::problem::ProblemOracle::eval_hess(&oracle, std::hint::black_box(&w)))
    });
    c.bench_function("phase_retrieval_hvp_n16", |b| {
        b.iter(|| {
            cubicreg::problem::ProblemOracle::eval_hvp(
                &oracle,
                std::hint::black_box(&w),
                std::hint::black_box(&v),
            )
        })
    });
}

fn bench_factor_set_distance(c: &mut Criterion) {
    let instance = matrix_recovery::generate_instance(32, 6, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    c.bench_function("matrix_recovery_dist_32x6", |b| {
        b.iter_batched(
            || DMatrix::from_fn(32, 6, |_, _| rng.gen_range(-1.0..1.0)),
            |u| matrix_recovery::dist_to_factor_set(&instance, std::hint::black_box(&u)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_solve_cubic,
    bench_phase_retrieval_oracle,
    bench_factor_set_distance
);
criterion_main!(benches);
