use super::*;
use crate::density::{KernelKind, ManifoldKind, MixtureDensity};
use crate::fields::LinearField;
use crate::flow::integrate;
use crate::quadrature::adaptive_simpson;
use proptest::prelude::*;

fn gaussian_2_in_5(t_min: f64) -> FieldSpec {
    let p = MixtureDensity::diagonal_gaussian(vec![0.0; 5], vec![1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    FieldSpec::true_score(Arc::new(p), ScheduleConfig::default().with_t_min(t_min))
}

fn sensitivity_run(fs: &FieldSpec, x1: &[f64]) -> SingularTrajectory {
    let rec = integrate_field(fs, &IntegratorConfig::default(), x1, &Augment::sensitivity()).unwrap();
    singular_trajectories(&rec, Some(fs)).unwrap()
}

/// y(t) = exp(-∫_t^1 μ) with μ = ½g²/(var + σ²), integrated numerically.
fn diagonal_oracle(cfg: &ScheduleConfig, var: f64, t: f64) -> f64 {
    let mu = |s: f64| 0.5 * cfg.diffusion_sq(s) / (var + cfg.noise_scale(s).unwrap());
    (-adaptive_simpson(mu, t, 1.0, 1e-12).unwrap()).exp()
}

#[test]
fn zero_field_has_unit_singular_values() {
    let field = LinearField {
        dim: 3,
        matrix: |_t: f64| DMatrix::zeros(3, 3),
    };
    let cfg = ScheduleConfig::default();
    let rec = integrate(
        &field,
        &cfg,
        &IntegratorConfig::default(),
        &[1.0, 2.0, 3.0],
        &Augment::sensitivity(),
    )
    .unwrap();
    let st = singular_trajectories(&rec, None).unwrap();
    assert!(st.sv.iter().flatten().all(|&s| (s - 1.0).abs() < 1e-15));
    assert!(st.ts.windows(2).all(|w| w[0] < w[1]));
    assert!(st.mu.is_none());
    assert!(matches!(lemma_check(&st, 5), Err(Error::NotConservative)));

    let flat = SingularTrajectory {
        mu: Some(vec![vec![0.0; 3]; st.ts.len()]),
        ..st
    };
    assert_eq!(lemma_check(&flat, 10).unwrap(), 0.0);
}

#[test]
fn embedded_gaussian_singular_values_match_closed_form() {
    let fs = gaussian_2_in_5(1e-3);
    let cfg = fs.schedule;
    let st = sensitivity_run(&fs, &[0.3, -1.0, 2.0, 0.5, -4.0]);
    let last = &st.sv[0];
    assert_eq!(st.ts[0], 1e-3);

    let on = diagonal_oracle(&cfg, 1.0, 1e-3);
    let off = diagonal_oracle(&cfg, 0.0, 1e-3);
    let s2 = |t: f64| cfg.noise_scale(t).unwrap();
    assert!((on - ((1.0 + s2(1e-3)) / (1.0 + s2(1.0))).sqrt()).abs() < 1e-10);
    assert!((off - (s2(1e-3) / s2(1.0)).sqrt()).abs() < 1e-10);
    assert!((on - 0.1011).abs() < 1e-4, "{on}");
    assert!((off - 3.217e-3).abs() < 1e-6, "{off}");
    for i in 0..2 {
        assert!((last[i] - on).abs() < 1e-6 * on);
    }
    for i in 2..5 {
        assert!((last[i] - off).abs() < 1e-6 * off);
    }
}

#[test]
fn singular_values_satisfy_liouville() {
    let spec = ManifoldSpec::new(ManifoldKind::Sphere, 1, 3).with_kernel(KernelKind::Tangent, 0.1);
    let mut spec = spec;
    spec.n_centers = 32;
    let p = Arc::new(spec.build_density(4).unwrap());
    let fs = FieldSpec::true_score(p, ScheduleConfig::default());
    for fs in [fs, gaussian_2_in_5(1e-3)] {
        let x1 = fs
            .density
            .sample_one(Diffusion::at(&fs.schedule, 1.0), &mut stream_rng(9, 0));
        let rec = integrate_field(
            &fs,
            &IntegratorConfig::default(),
            x1.as_slice(),
            &Augment::sensitivity(),
        )
        .unwrap();
        let st = singular_trajectories(&rec, Some(&fs)).unwrap();
        let liouville = rec.liouville_integral().unwrap();
        let log_prod: f64 = st.sv[0].iter().map(|s| s.ln()).sum();
        assert!((log_prod - liouville).abs() < 1e-6, "{log_prod} {liouville}");
        assert!(st
            .sv
            .iter()
            .all(|row| row.iter().all(|&s| s > 0.0) && row.windows(2).all(|w| w[0] >= w[1])));
    }
}

#[test]
fn non_finite_sensitivity_is_a_divergence() {
    let fs = gaussian_2_in_5(1e-3);
    let mut rec = integrate_field(&fs, &IntegratorConfig::default(), &[0.0; 5], &Augment::sensitivity()).unwrap();
    rec.y.as_mut().unwrap()[3][(0, 0)] = f64::NAN;
    assert!(matches!(
        singular_trajectories(&rec, None),
        Err(Error::Divergence { .. })
    ));
    rec.y = None;
    assert!(singular_trajectories(&rec, None).is_err());
}

#[test]
fn lemma_holds_on_diagonal_gaussian() {
    let fs = gaussian_2_in_5(1e-3);
    let st = sensitivity_run(&fs, &[1.0, 2.0, -3.0, 0.1, 0.0]);
    assert!(st.mu.is_some());
    let last = st.ts.len() - 1;
    let err = lemma_check(&st, last).unwrap();
    assert!(err < 1e-3, "{err}");
    assert!(lemma_check(&st, last + 1).is_err());
    assert!(st.commutator.as_ref().unwrap().iter().all(|&c| c < 1e-8));
}

#[test]
fn lemma_holds_approximately_on_sphere_mixture() {
    let mut spec = ManifoldSpec::new(ManifoldKind::Sphere, 2, 6).with_kernel(KernelKind::Tangent, 0.05);
    spec.n_centers = 128;
    let cfg = IdConfig::default();
    let p = Arc::new(spec.build_density(1).unwrap());
    let fs = FieldSpec::true_score(p.clone(), cfg.schedule);
    let x1 = p.sample_one(Diffusion::at(&cfg.schedule, 1.0), &mut stream_rng(2, 0));
    let rec = integrate_field(&fs, &cfg.integrator, x1.as_slice(), &Augment::sensitivity()).unwrap();
    let st = singular_trajectories(&rec, Some(&fs)).unwrap();
    // ε one decade above t_min.
    let eps_index = st.ts.iter().position(|&t| t >= 10.0 * st.ts[0] * (1.0 - 1e-9)).unwrap();
    let err = lemma_check(&st, eps_index).unwrap();
    assert!(err < 1e-2, "{err}");
}

#[test]
fn estimate_on_embedded_and_full_rank_gaussians() {
    let fs = gaussian_2_in_5(1e-4);
    let st = sensitivity_run(&fs, &[0.3, -1.0, 2.0, 0.5, -4.0]);
    let est = estimate_id(&st, 0.5, 1.0).unwrap();
    assert_eq!(est.d_hat, 2);
    assert!(est.per_sample.is_empty());

    let full = MixtureDensity::diagonal_gaussian(vec![0.0; 4], vec![1.0, 2.0, 0.5, 3.0]).unwrap();
    let fs = FieldSpec::true_score(Arc::new(full), ScheduleConfig::default().with_t_min(1e-4));
    let st = sensitivity_run(&fs, &[1.0, 1.0, 1.0, 1.0]);
    assert_eq!(estimate_id(&st, 0.5, 1.0).unwrap().d_hat, 4);
}

#[test]
fn slopes_approach_their_asymptotes() {
    // Under VE the off-manifold values are exactly proportional to σ(t); the
    // on-manifold ones flatten as t_min shrinks.
    let mut previous = f64::INFINITY;
    for t_min in [1e-2, 1e-3, 1e-4] {
        let st = sensitivity_run(&gaussian_2_in_5(t_min), &[0.3, -1.0, 2.0, 0.5, -4.0]);
        let est = estimate_id(&st, 0.5, 1.0).unwrap();
        let on = est.slopes[0].abs();
        assert!(on < previous, "{t_min}: {on}");
        assert!(est.slopes[2..].iter().all(|s| (s - 1.0).abs() < 1e-6));
        previous = on;
    }
    assert!(previous < 1e-3);
}

#[test]
fn estimate_rejects_short_windows() {
    let fs = gaussian_2_in_5(1e-3);
    let icfg = IntegratorConfig::default().with_checkpoints(3);
    let rec = integrate_field(&fs, &icfg, &[1.0; 5], &Augment::sensitivity()).unwrap();
    let st = singular_trajectories(&rec, Some(&fs)).unwrap();
    assert!(matches!(
        estimate_id(&st, 0.5, 1.0),
        Err(Error::InsufficientCheckpoints(_))
    ));
    let st = sensitivity_run(&fs, &[1.0; 5]);
    assert!(matches!(
        estimate_id(&st, 0.5, 4.0),
        Err(Error::InsufficientCheckpoints(_))
    ));
    assert!(estimate_id(&st, 0.0, 1.0).is_err());
    let blind = SingularTrajectory {
        noise_std: vec![f64::NAN; st.ts.len()],
        ..st
    };
    assert!(estimate_id(&blind, 0.5, 1.0).is_err());
}

#[test]
fn modal_breaks_ties_downwards() {
    assert_eq!(modal(&[3, 2, 3, 2]), (2, 0.5));
    assert_eq!(modal(&[1, 1, 1, 4]), (1, 0.75));
    assert_eq!(modal(&[]), (0, 0.0));
}

#[test]
fn sphere_experiment_recovers_dimension() {
    let spec = ManifoldSpec::new(ManifoldKind::Sphere, 2, 6).with_kernel(KernelKind::Tangent, 0.0);
    let cfg = IdConfig {
        n_samples: 3,
        ..IdConfig::default()
    };
    let res = run_manifold_experiment(&spec, &RemainderSpec::Zero, &cfg, 11).unwrap();
    assert_eq!(res.modal_d, 2);
    assert_eq!(res.agreement, 1.0);
    assert!(res.conservative && res.flag.is_none());
    assert_eq!(res.estimates.len(), 3);
    let again = run_manifold_experiment(&spec, &RemainderSpec::Zero, &cfg, 11).unwrap();
    assert_eq!(res, again);
}

#[test]
fn non_conservative_remainder_is_flagged() {
    let spec = ManifoldSpec::new(ManifoldKind::EmbeddedGaussian, 2, 5);
    let cfg = IdConfig {
        n_samples: 5,
        ..IdConfig::default()
    };
    let res = run_manifold_experiment(&spec, &non_conservative_remainder(2, 5), &cfg, 3).unwrap();
    assert_eq!(res.flag.as_deref(), Some(NON_CONSERVATIVE_FLAG));
    assert!(!res.conservative);
    assert!(res.estimates.iter().filter(|e| e.d_hat != 2).count() > cfg.n_samples / 2);
    assert!(res.max_commutator > 0.0);
}

fn synthetic(slopes: &[f64], scale: f64) -> SingularTrajectory {
    let ts: Vec<f64> = (0..30).map(|k| 1e-4 * 10f64.powf(k as f64 / 10.0)).collect();
    let noise_std: Vec<f64> = ts.iter().map(|t| t.sqrt()).collect();
    let sv = noise_std
        .iter()
        .map(|s| {
            let mut row: Vec<f64> = slopes.iter().map(|a| scale * s.powf(*a)).collect();
            row.sort_by(|a, b| b.total_cmp(a));
            row
        })
        .collect();
    SingularTrajectory {
        ts,
        noise_std,
        sv,
        mu: None,
        commutator: None,
    }
}

proptest! {
    #[test]
    fn slope_classification_is_scale_invariant(
        slopes in prop::collection::vec(0.0f64..1.5, 1..6),
        scale in 1e-3f64..1e3,
        thr in 0.05f64..1.0,
    ) {
        let a = estimate_id(&synthetic(&slopes, 1.0), thr, 1.0).unwrap();
        let b = estimate_id(&synthetic(&slopes, scale), thr, 1.0).unwrap();
        prop_assert_eq!(a.d_hat, b.d_hat);
        for (x, y) in a.slopes.iter().zip(&b.slopes) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn raising_the_threshold_never_lowers_d_hat(
        slopes in prop::collection::vec(0.0f64..1.5, 1..6),
        thr in 0.05f64..1.0,
        bump in 0.0f64..1.0,
    ) {
        let st = synthetic(&slopes, 1.0);
        let lo = estimate_id(&st, thr, 1.0).unwrap().d_hat;
        let hi = estimate_id(&st, thr + bump, 1.0).unwrap().d_hat;
        prop_assert!(hi >= lo);
        prop_assert!(hi <= slopes.len());
    }
}
