use super::*;

#[test]
fn bounds_classify_values() {
    assert!(Bound::Below { limit: 1.0 }.holds(0.5));
    assert!(!Bound::Below { limit: 1.0 }.holds(1.0));
    assert!(!Bound::Below { limit: 1.0 }.holds(f64::NAN));
    assert!(Bound::Above { limit: 0.0 }.holds(1e-300));
    assert!(Bound::Within { lo: 2.0, hi: 2.0 }.holds(2.0));
    assert!(!Bound::Within { lo: 2348.0, hi: 2350.0 }.holds(2350.5));
}

#[test]
fn verdict_follows_checks() {
    let mut rec = Recorder::new("demo", 1e-3);
    rec.below("a", 0.0, 1.0);
    rec.diagnostic("ignored", f64::INFINITY);
    let ok = rec.finish();
    assert_eq!(ok.verdict, Verdict::Pass);
    assert!(ok.as_expected());

    let mut rec = Recorder::new("demo", 1e-3);
    rec.expected_fail = true;
    rec.below("a", 2.0, 1.0);
    rec.above("b", 2.0, 1.0);
    let r = rec.finish();
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.as_expected());
    assert_eq!(r.checks.iter().filter(|c| c.passed).count(), 1);
}

#[test]
fn conservative_offset_matches_closed_form() {
    let r = conservative_bad_generator(1).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "{r:#?}");
    let factor = r.quantity("offset_factor").unwrap();
    // (½ (g² - 1) / (2 ln g))² for g = 25.
    let expected = (0.5 * (625.0 - 1.0) / (2.0 * 25f64.ln())).powi(2);
    assert!((factor - expected).abs() < 1e-8 * expected);
    assert!((factor - 2348.8).abs() < 0.5);
    assert!(r.diagnostics["full_score_deviation_factor"] < factor);
}

#[test]
fn curl_generator_deviates_beyond_bound() {
    let r = curl_bad_generator(5).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "{r:#?}");
    assert_eq!(r.quantity("deviation_at_zero_epsilon").unwrap(), 0.0);
    assert!(r.quantity("deviation").unwrap() >= r.quantity("bound").unwrap());
    let z0 = r.diagnostics["z0"];
    assert!(z0.abs() >= 1e-3);
    assert!((r.diagnostics["epsilon"] * z0 - 2.0).abs() < 1e-12);
    assert_eq!(r.tables["curl_trajectory"].rows.len(), 400);
}

#[test]
fn commuting_variants() {
    let r = commuting_flows(CommutingVariant::Rotation, 3).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "{r:#?}");
    assert!(r.diagnostics["a_asymmetry"] > 0.0);
    let s = commuting_flows(CommutingVariant::Symmetric, 3).unwrap();
    assert_eq!(s.verdict, Verdict::Pass, "{s:#?}");
    let n = commuting_flows(CommutingVariant::NonCommuting, 3).unwrap();
    assert_eq!(n.verdict, Verdict::Fail);
    assert!(n.expected_fail && n.as_expected());
    assert!(n.quantity("bracket_norm").unwrap() > 0.1);
}

#[test]
fn registry_rejects_unknown_names() {
    let names = scenario_names();
    assert_eq!(names.len(), 15);
    let err = run_scenario("nope", 0).unwrap_err().to_string();
    assert!(
        err.contains("section4_counterexample") && err.contains("id_swiss_roll_d5"),
        "{err}"
    );
}

#[test]
fn scenarios_are_deterministic() {
    let a = run_scenario("commuting_flows", 9).unwrap();
    let b = run_scenario("commuting_flows", 9).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_scenario("commuting_flows", 10).unwrap();
    assert_ne!(a.quantities, c.quantities);
}

#[test]
fn id_case_reports_per_sample_table() {
    let cases = id_cases();
    let cfg = IdConfig {
        n_samples: 3,
        ..IdConfig::default()
    };
    let r = id_scenario(&cases[0], &cfg, 1).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let t = &r.tables["id_gaussian_2_in_5"];
    assert_eq!(t.header.len(), 2 + 5);
    assert_eq!(t.rows.len(), 3);
    assert_eq!(r.documents["id_gaussian_2_in_5_aggregate"]["modal_d"], 2);

    let nc = cases.iter().find(|c| c.non_conservative).unwrap();
    let r = id_scenario(nc, &cfg, 1).unwrap();
    assert!(r.expected_fail && r.as_expected());
    assert_eq!(r.quantity("flagged"), Some(1.0));
}
