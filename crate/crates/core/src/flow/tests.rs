use super::*;
use crate::density::MixtureDensity;
use crate::fields::{LinearField, RemainderSpec};
use crate::rng::stream_rng;
use std::sync::Arc;

fn gauss(var: Vec<f64>) -> Arc<MixtureDensity> {
    Arc::new(MixtureDensity::diagonal_gaussian(vec![0.0; var.len()], var).unwrap())
}

#[test]
fn mode_is_a_fixed_point_and_logdet_matches_densities() {
    let cfg = ScheduleConfig::default();
    let p = gauss(vec![1.0, 1.0]);
    let fs = FieldSpec::true_score(p.clone(), cfg);
    let rec = integrate_field(&fs, &IntegratorConfig::default(), &[0.0, 0.0], &Augment::all()).unwrap();
    assert!(rec.states.iter().all(|s| s.norm() == 0.0));
    assert_eq!(rec.times[0], 1.0);
    assert_eq!(*rec.times.last().unwrap(), cfg.t_min);
    let lp = |t: f64| p.diffuse(&cfg, t).unwrap().log_density(&[0.0, 0.0]).unwrap();
    let expected = lp(cfg.t_min) - lp(1.0);
    assert!((rec.logdet_increment().unwrap() - expected).abs() < 1e-8);
    for (t, l) in rec.times.iter().zip(rec.logdet.as_ref().unwrap()) {
        assert!((l - (lp(*t) - lp(1.0))).abs() < 1e-8);
    }
    assert_eq!(rec.y.as_ref().unwrap()[0], DMatrix::identity(2, 2));
}

#[test]
fn negated_base_under_ve_does_not_move() {
    let cfg = ScheduleConfig::default();
    let fs = FieldSpec::true_score(gauss(vec![1.0, 2.0]), cfg).with_negated_base();
    let x = [3.0, -7.5];
    let rec = integrate_field(&fs, &IntegratorConfig::default(), &x, &Augment::all()).unwrap();
    assert_eq!(rec.end_state().as_slice(), &x);
    assert_eq!(liouville_check(&rec).unwrap(), 0.0);
    assert!(rec.y.unwrap().iter().all(|y| *y == DMatrix::identity(2, 2)));
}

#[test]
fn liouville_on_linear_diagonal_field() {
    let field = LinearField {
        dim: 3,
        matrix: |t: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0 * t, t * t])),
    };
    let cfg = ScheduleConfig::default();
    let rec = integrate(
        &field,
        &cfg,
        &IntegratorConfig::default(),
        &[1.0, 1.0, 1.0],
        &Augment::all(),
    )
    .unwrap();
    assert!(liouville_check(&rec).unwrap() < 1e-8);
    // Closed form: Y is diagonal with exp of the integrals from 1 to t_min.
    let t = cfg.t_min;
    let expected = [
        (t - 1.0f64).exp(),
        (-(t * t - 1.0f64)).exp(),
        ((t.powi(3) - 1.0) / 3.0f64).exp(),
    ];
    let y = rec.y.as_ref().unwrap().last().unwrap();
    for i in 0..3 {
        assert!((y[(i, i)] - expected[i]).abs() < 1e-8 * expected[i]);
    }
}

#[test]
fn likelihood_of_gaussian_at_the_mode() {
    let cfg = ScheduleConfig::default();
    let p = gauss(vec![1.0, 1.0]);
    let fs = FieldSpec::true_score(p.clone(), cfg);
    let l = likelihood(&fs, &IntegratorConfig::default(), &[0.0, 0.0]).unwrap();
    let exact = p.diffuse(&cfg, cfg.t_min).unwrap().log_density(&[0.0, 0.0]).unwrap();
    assert!((l.log_p - exact).abs() < 1e-6);
}

#[test]
fn likelihood_of_mixture_at_random_points() {
    let cfg = ScheduleConfig::default();
    let p = Arc::new(
        MixtureDensity::new(
            vec![0.3, 0.7],
            vec![DVector::from_vec(vec![1.0, -1.0]), DVector::from_vec(vec![-1.0, 0.5])],
            vec![
                DMatrix::identity(2, 2) * 0.5,
                DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.3]),
            ],
        )
        .unwrap(),
    );
    let fs = FieldSpec::true_score(p.clone(), cfg);
    let pt = p.diffuse(&cfg, cfg.t_min).unwrap();
    for x in p.sample(Diffusion::at(&cfg, cfg.t_min), 5, 3) {
        let l = likelihood(&fs, &IntegratorConfig::default(), x.as_slice()).unwrap();
        let exact = pt.log_density(x.as_slice()).unwrap();
        assert!((l.log_p - exact).abs() < 1e-5, "{} vs {}", l.log_p, exact);
    }
}

#[test]
fn hutchinson_augmentation_is_unbiased_on_average() {
    let cfg = ScheduleConfig::default();
    let p = gauss(vec![1.0, 0.5, 2.0]);
    let fs = FieldSpec::true_score(p, cfg);
    let x = [0.3, -0.2, 1.0];
    let exact = likelihood(&fs, &IntegratorConfig::default(), &x)
        .unwrap()
        .divergence_integral;
    let estimates: Vec<f64> = (0..40)
        .map(|seed| {
            let h = HutchinsonConfig {
                n_probes: 4,
                probe_dist: ProbeDist::Gaussian,
                seed,
            };
            likelihood_with(&fs, &IntegratorConfig::default(), &x, Some(h))
                .unwrap()
                .divergence_integral
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 40.0;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 39.0;
    assert!((mean - exact).abs() < 3.0 * (var / 40.0).sqrt() + 1e-9);
}

#[test]
fn rk4_converges_at_fourth_order_against_adaptive_reference() {
    let cfg = ScheduleConfig::default();
    let fs = FieldSpec::true_score(gauss(vec![1.0, 0.25]), cfg);
    let x = [1.5, -0.5];
    let reference = integrate_field(&fs, &IntegratorConfig::adaptive(1e-12, 1e-14), &x, &Augment::none()).unwrap();
    let err = |n: usize| {
        let r = integrate_field(&fs, &IntegratorConfig::rk4(n).with_checkpoints(2), &x, &Augment::none()).unwrap();
        (r.end_state() - reference.end_state()).norm()
    };
    let ratio = err(100) / err(200);
    assert!(ratio > 12.0, "{ratio}");
}

#[test]
fn integration_errors_surface() {
    let cfg = ScheduleConfig::default();
    let fs = FieldSpec::true_score(gauss(vec![1.0]), cfg);
    assert!(matches!(
        integrate_field(&fs, &IntegratorConfig::default(), &[0.0, 0.0], &Augment::none()),
        Err(Error::Dimension { .. })
    ));
    assert!(integrate_field(&fs, &IntegratorConfig::default(), &[f64::NAN], &Augment::none()).is_err());
    let blow_up = LinearField {
        dim: 1,
        matrix: |t: f64| DMatrix::from_element(1, 1, -1.0 / (t - 0.5).powi(2)),
    };
    let r = integrate(&blow_up, &cfg, &IntegratorConfig::default(), &[1.0], &Augment::none());
    assert!(
        matches!(r, Err(Error::Stiffness { .. }) | Err(Error::Divergence { .. })),
        "{r:?}"
    );
}

#[test]
fn sensitivity_eigenvalues_stay_positive() {
    let cfg = ScheduleConfig::default();
    let p = gauss(vec![1.0, 1.0, 0.0, 0.0, 0.0]);
    let fs = FieldSpec::true_score(p.clone(), cfg);
    let x = p.sample_one(Diffusion::at(&cfg, 1.0), &mut stream_rng(1, 0));
    let rec = integrate_field(&fs, &IntegratorConfig::default(), x.as_slice(), &Augment::all()).unwrap();
    for y in rec.y.as_ref().unwrap() {
        let ev = (y * y.transpose()).symmetric_eigenvalues();
        assert!(ev.iter().all(|e| *e > 0.0));
    }
    assert!(liouville_check(&rec).unwrap() < 1e-6);
}

#[test]
fn rotation_remainder_preserves_likelihood() {
    let cfg = ScheduleConfig::default();
    let p = gauss(vec![1.0, 2.0]);
    let fs = FieldSpec::new(p.clone(), cfg, RemainderSpec::section4(&p).unwrap()).unwrap();
    let x = [0.4, -1.1];
    let l = likelihood(&fs, &IntegratorConfig::default(), &x).unwrap();
    let exact = p.diffuse(&cfg, cfg.t_min).unwrap().log_density(&x).unwrap();
    assert!((l.log_p - exact).abs() < 1e-4, "{} vs {}", l.log_p, exact);
}
