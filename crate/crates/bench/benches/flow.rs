use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gaugeflow::density::Scratch;
use gaugeflow::flow::{hutchinson_trace, integrate_field, likelihood, ProbeDist};
use gaugeflow::idest::{estimate_id, singular_trajectories, IdConfig};
use gaugeflow::{Augment, Diffusion, FieldSpec, IntegratorConfig, VectorField};
use gaugeflow_bench::{mixture_field, rotation_field, sphere_spec};

fn field_evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("field_jacobian");
    for k in [1, 8, 64] {
        let fs = mixture_field(5, k);
        let x = [0.3, -0.2, 1.0, 0.5, -1.5];
        let (mut out, mut jac) = (vec![0.0; 5], vec![0.0; 25]);
        let mut ws = Scratch::new();
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| {
                fs.flow()
                    .rhs_jacobian(black_box(&x), 0.3, &mut out, &mut jac, &mut ws)
                    .unwrap();
            })
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let fs = rotation_field(4);
    let icfg = IntegratorConfig::default().with_checkpoints(2);
    let x1 = [10.0, -20.0, 5.0, 30.0];
    c.bench_function("backward_solve_rotation_d4", |b| {
        b.iter(|| integrate_field(&fs, &icfg, black_box(&x1), &Augment::none()).unwrap())
    });
    // Fixed steps are unstable on the rotation field near t = 1, so RK4 runs on a true score.
    let mix = mixture_field(4, 8);
    let rk4 = IntegratorConfig::rk4(500).with_checkpoints(2);
    c.bench_function("backward_solve_rk4_500_mixture_k8", |b| {
        b.iter(|| integrate_field(&mix, &rk4, black_box(&x1), &Augment::none()).unwrap())
    });
}

fn likelihoods(c: &mut Criterion) {
    let fs = mixture_field(3, 4);
    let x0 = [0.5, -1.0, 0.2];
    c.bench_function("likelihood_mixture_k4_d3", |b| {
        b.iter(|| likelihood(&fs, &IntegratorConfig::default(), black_box(&x0)).unwrap())
    });
    let j = nalgebra::DMatrix::from_fn(8, 8, |i, k| ((i * 8 + k) as f64).cos());
    c.bench_function("hutchinson_1e4_probes_d8", |b| {
        b.iter(|| hutchinson_trace(black_box(&j), 10_000, ProbeDist::Rademacher, 3).unwrap())
    });
}

fn sensitivity(c: &mut Criterion) {
    let cfg = IdConfig::default();
    let spec = sphere_spec(3, 256);
    let fs = FieldSpec::true_score(std::sync::Arc::new(spec.build_density(1).unwrap()), cfg.schedule);
    let x1 = fs
        .density
        .sample_one(Diffusion::at(&cfg.schedule, 1.0), &mut gaugeflow::rng::stream_rng(2, 0));
    let mut group = c.benchmark_group("id_single_sample");
    group.sample_size(10);
    group.bench_function("sphere_d4_256_centers", |b| {
        b.iter(|| {
            let rec = integrate_field(&fs, &cfg.integrator, x1.as_slice(), &Augment::sensitivity()).unwrap();
            let st = singular_trajectories(&rec, Some(&fs)).unwrap();
            estimate_id(&st, cfg.slope_threshold, cfg.fit_decades).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, field_evaluation, sampling, likelihoods, sensitivity);
criterion_main!(benches);
