//! Canned experiments with machine-checkable verdicts.
//!
//! Each scenario records named quantities together with the bound each must
//! satisfy; the verdict is Pass exactly when every bound holds. Scenarios whose
//! hypotheses are deliberately violated are marked `expected_fail`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{Diffusion, KernelKind, ManifoldKind, ManifoldSpec, MixtureDensity};
use crate::error::{Error, Result};
use crate::fields::{conservativity_check, FieldSpec, MatrixOfTime, RemainderSpec, TimeScale};
use crate::flow::{empirical_moments, end_states, integrate_field, likelihood, Augment, Direction, IntegratorConfig};
use crate::gauge::{
    gauge_residual, lie_bracket_linear, lifted_commutation_residual, trace_invariance_check, AffineLift, ReversedFlow,
};
use crate::idest::{non_conservative_remainder, run_manifold_experiment, IdConfig};
use crate::io::Table;
use crate::quadrature::adaptive_simpson;
use crate::rng::{derive_seed, stream_rng};
use crate::schedule::{BetaSchedule, ScheduleConfig, Spacing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum Bound {
    Below { limit: f64 },
    Above { limit: f64 },
    Within { lo: f64, hi: f64 },
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below { limit } => v < limit,
            Bound::Above { limit } => v > limit,
            Bound::Within { lo, hi } => (lo..=hi).contains(&v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub quantity: String,
    #[serde(flatten)]
    pub bound: Bound,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub quantities: BTreeMap<String, f64>,
    /// Values reported for context, not gated.
    pub diagnostics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub tolerance_used: f64,
    pub expected_fail: bool,
    pub notes: Vec<String>,
    pub error: Option<String>,
    /// Per-scenario CSV artifacts, keyed by file stem.
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
    /// Extra JSON artifacts, keyed by file stem.
    #[serde(skip)]
    pub documents: BTreeMap<String, serde_json::Value>,
}

impl ScenarioResult {
    /// Pass for ordinary scenarios, Fail for expected-fail ones.
    pub fn as_expected(&self) -> bool {
        (self.verdict == Verdict::Pass) != self.expected_fail
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.get(name).copied()
    }

    fn failed(name: &str, err: &Error, expected_fail: bool) -> Self {
        let mut r = Recorder::new(name, f64::NAN);
        r.expected_fail = expected_fail;
        let mut out = r.finish();
        out.verdict = Verdict::Fail;
        out.error = Some(err.to_string());
        out
    }
}

struct Recorder {
    name: String,
    quantities: BTreeMap<String, f64>,
    diagnostics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    tolerance_used: f64,
    expected_fail: bool,
    notes: Vec<String>,
    tables: BTreeMap<String, Table>,
    documents: BTreeMap<String, serde_json::Value>,
}

impl Recorder {
    fn new(name: &str, tolerance_used: f64) -> Self {
        Recorder {
            name: name.to_string(),
            quantities: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            checks: Vec::new(),
            tolerance_used,
            expected_fail: false,
            notes: Vec::new(),
            tables: BTreeMap::new(),
            documents: BTreeMap::new(),
        }
    }

    fn record(&mut self, name: &str, value: f64) {
        self.quantities.insert(name.to_string(), value);
    }

    fn check(&mut self, name: &str, value: f64, bound: Bound) {
        self.record(name, value);
        self.checks.push(Check {
            quantity: name.to_string(),
            bound,
            passed: bound.holds(value),
        });
    }

    fn below(&mut self, name: &str, value: f64, limit: f64) {
        self.check(name, value, Bound::Below { limit });
    }

    fn above(&mut self, name: &str, value: f64, limit: f64) {
        self.check(name, value, Bound::Above { limit });
    }

    fn within(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.check(name, value, Bound::Within { lo, hi });
    }

    fn diagnostic(&mut self, name: &str, value: f64) {
        self.diagnostics.insert(name.to_string(), value);
    }

    fn finish(self) -> ScenarioResult {
        let verdict = if self.checks.iter().all(|c| c.passed) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ScenarioResult {
            name: self.name,
            quantities: self.quantities,
            diagnostics: self.diagnostics,
            checks: self.checks,
            verdict,
            tolerance_used: self.tolerance_used,
            expected_fail: self.expected_fail,
            notes: self.notes,
            error: None,
            tables: self.tables,
            documents: self.documents,
        }
    }
}

/// Number of samples in the distributional checks.
pub const ENSEMBLE_SIZE: usize = 10_000;
/// Samples integrated directly to validate the linear flow map.
const DIRECT_SUBSET: usize = 100;
/// Both sides of the flow-map comparison carry solver error at rel 1e-8.
const FLOW_MAP_TOL: f64 = 1e-5;

/// Relative Frobenius distance ‖a - b‖ / ‖b‖.
fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// The end-state map of a backward solve of a linear homogeneous flow.
fn flow_map(fs: &FieldSpec, icfg: &IntegratorConfig) -> Result<DMatrix<f64>> {
    let icfg = icfg.with_checkpoints(2).with_direction(Direction::Backward);
    let rec = integrate_field(fs, &icfg, &vec![0.0; fs.dim()], &Augment::sensitivity())?;
    Ok(rec.y.expect("sensitivity requested").pop().expect("two outputs"))
}

/// Largest |direct - Φ x| / (1 + |direct|) over the first samples.
fn flow_map_mismatch(fs: &FieldSpec, icfg: &IntegratorConfig, phi: &DMatrix<f64>, x1: &[DVector<f64>]) -> Result<f64> {
    let direct = end_states(fs, icfg, x1)?;
    Ok(direct
        .iter()
        .zip(x1)
        .map(|(d, x)| (d - phi * x).amax() / (1.0 + d.amax()))
        .fold(0.0, f64::max))
}

/// Gauge-satisfying, non-conservative remainder for a diagonal Gaussian, with
/// sampling and likelihood checked against closed forms.
pub fn section4_counterexample(seed: u64) -> Result<ScenarioResult> {
    let mut rec = Recorder::new("section4_counterexample", 1e-10);
    let cfg = ScheduleConfig::default();
    let icfg = IntegratorConfig::default();
    let var0 = vec![1.0, 4.0];
    let p = Arc::new(MixtureDensity::diagonal_gaussian(vec![0.0; 2], var0.clone())?);
    let fs = FieldSpec::new(p.clone(), cfg, RemainderSpec::section4(&p)?)?;

    let mut rng = stream_rng(derive_seed(seed, "gauge"), 0);
    let mut residual_max = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(cfg.t_min..=1.0);
        let x = p.sample_one(Diffusion::at(&cfg, t), &mut rng);
        let pt = p.diffuse(&cfg, t)?;
        residual_max = residual_max.max(gauge_residual(&fs.remainder, &cfg, &pt, x.as_slice(), t)?.abs());
    }
    rec.below("gauge_residual_max", residual_max, 1e-10);

    let probe = p.sample(Diffusion::at(&cfg, 0.5), 20, derive_seed(seed, "asymmetry"));
    let asym = conservativity_check(&fs, &probe, 0.5, 1e-8)?;
    rec.above("jacobian_asymmetry", asym.max_asymmetry, 0.1);

    let x1 = p.sample(Diffusion::at(&cfg, 1.0), ENSEMBLE_SIZE, derive_seed(seed, "ensemble"));
    let phi = flow_map(&fs, &icfg)?;
    let ends: Vec<DVector<f64>> = x1.iter().map(|x| &phi * x).collect();
    let s2 = cfg.noise_scale(cfg.t_min)?;
    let target = DMatrix::from_diagonal(&DVector::from_iterator(2, var0.iter().map(|v| v + s2)));
    let (_, cov) = empirical_moments(&ends);
    rec.below("covariance_rel_error", rel_frobenius(&cov, &target), 0.05);
    rec.below(
        "flow_map_mismatch",
        flow_map_mismatch(&fs, &icfg, &phi, &x1[..DIRECT_SUBSET])?,
        FLOW_MAP_TOL,
    );

    let phi_true = flow_map(&FieldSpec::true_score(p.clone(), cfg), &icfg)?;
    let true_ends: Vec<DVector<f64>> = x1.iter().map(|x| &phi_true * x).collect();
    let (_, cov_true) = empirical_moments(&true_ends);
    rec.diagnostic("true_score_covariance_rel_error", rel_frobenius(&cov_true, &target));
    rec.diagnostic(
        "mean_end_state_distance_to_true_score",
        ends.iter().zip(&true_ends).map(|(a, b)| (a - b).norm()).sum::<f64>() / ENSEMBLE_SIZE as f64,
    );

    let p_min = p.diffuse(&cfg, cfg.t_min)?;
    let x0s = p.sample(Diffusion::at(&cfg, cfg.t_min), 20, derive_seed(seed, "likelihood"));
    let mut lik_err = 0.0f64;
    for x0 in &x0s {
        let l = likelihood(&fs, &icfg, x0.as_slice())?;
        lik_err = lik_err.max((l.log_p - p_min.log_density(x0.as_slice())?).abs());
    }
    rec.below("likelihood_max_abs_error", lik_err, 1e-4);
    rec.notes.push(format!(
        "ensemble of {ENSEMBLE_SIZE} mapped through the sensitivity of the linear flow; {DIRECT_SUBSET} integrated directly"
    ));

    let mut samples = Table::new(["x0", "x1"]);
    for e in &ends {
        samples.push(e.iter().copied().collect());
    }
    rec.tables.insert("section4_samples".into(), samples);
    Ok(rec.finish())
}

/// A constant remainder: density traces are unchanged but every sample is
/// displaced by ½ ε ∫ g².
pub fn conservative_bad_generator(seed: u64) -> Result<ScenarioResult> {
    let mut rec = Recorder::new("conservative_bad_generator", 1e-3);
    let cfg = ScheduleConfig::default().with_t_min(1e-6);
    let icfg = IntegratorConfig::default();
    let g2 = |t: f64| cfg.diffusion_sq(t);

    let closed = (0.5 * cfg.noise_scale(1.0)?).powi(2);
    let quad = (0.5 * adaptive_simpson(g2, 0.0, 1.0, 1e-12)?).powi(2);
    let quad_window = (0.5 * adaptive_simpson(g2, cfg.t_min, 1.0, 1e-12)?).powi(2);
    rec.within("offset_factor", quad, 2348.0, 2350.0);
    rec.diagnostic("offset_factor_closed_form", closed);

    let eps = vec![0.3, -0.4];
    let eps_sq: f64 = eps.iter().map(|e| e * e).sum();
    let p = Arc::new(MixtureDensity::diagonal_gaussian(vec![1.0, -1.0], vec![1.0, 0.5])?);
    let remainder = RemainderSpec::ConstantDirection {
        r_of_t: TimeScale::One,
        epsilon: eps.clone(),
    };
    let x1 = p.sample(Diffusion::at(&cfg, 1.0), 8, derive_seed(seed, "init"));

    let offset_only = FieldSpec::new(p.clone(), cfg, remainder.clone())?.with_negated_base();
    let moved = end_states(&offset_only, &icfg, &x1)?;
    let factor_ode = moved
        .iter()
        .zip(&x1)
        .map(|(e, x)| (e - x).norm_squared() / eps_sq)
        .fold(0.0, f64::max);
    rec.within("offset_factor_ode", factor_ode, 2348.0, 2350.0);
    rec.below(
        "ode_vs_quadrature_rel",
        (factor_ode - quad_window).abs() / quad_window,
        1e-3,
    );

    let model = FieldSpec::new(p.clone(), cfg, remainder)?;
    let probe = p.sample(Diffusion::at(&cfg, 0.3), 50, derive_seed(seed, "probe"));
    rec.below("trace_invariance", trace_invariance_check(&model, 0.3, &probe)?, 1e-12);
    let pt = p.diffuse(&cfg, 0.3)?;
    let rms = (probe
        .iter()
        .map(|x| gauge_residual(&model.remainder, &cfg, &pt, x.as_slice(), 0.3).map(|r| r * r))
        .sum::<Result<f64>>()?
        / probe.len() as f64)
        .sqrt();
    rec.above("gauge_residual_rms", rms, 1e-3);

    let model_ends = end_states(&model, &icfg, &x1)?;
    let true_ends = end_states(&FieldSpec::true_score(p, cfg), &icfg, &x1)?;
    let full = model_ends
        .iter()
        .zip(&true_ends)
        .map(|(a, b)| (a - b).norm_squared() / eps_sq)
        .sum::<f64>()
        / x1.len() as f64;
    rec.diagnostic("full_score_deviation_factor", full);
    rec.notes.push(
        "offset_factor_ode integrates the remainder flow alone; with the score included the offset is contracted"
            .into(),
    );
    Ok(rec.finish())
}

/// A divergence-free curl remainder: exact likelihoods, displaced samples.
pub fn curl_bad_generator(seed: u64) -> Result<ScenarioResult> {
    let mut rec = Recorder::new("curl_bad_generator", 1e-12);
    let cfg = ScheduleConfig::default().with_t_min(1e-6);
    let icfg = IntegratorConfig {
        n_checkpoints: 400,
        spacing: Spacing::Linear,
        ..IntegratorConfig::default()
    };
    let p = Arc::new(MixtureDensity::diagonal_gaussian(
        vec![30.0, 0.0, 0.0],
        vec![1.0, 1.0, 100.0],
    )?);

    let init_seed = derive_seed(seed, "init");
    let mut draws = 0u64;
    let x1 = loop {
        let x = p.sample_one(Diffusion::at(&cfg, 1.0), &mut stream_rng(init_seed, draws));
        draws += 1;
        if x[2].abs() >= 1e-3 {
            break x;
        }
    };
    let z0 = x1[2];
    let eps = 2.0 / z0;
    rec.diagnostic("z0", z0);
    rec.diagnostic("epsilon", eps);
    rec.diagnostic("initial_draws", draws as f64);

    let model = FieldSpec::new(p.clone(), cfg, RemainderSpec::CurlQuadratic { epsilon: eps })?;
    let truth = FieldSpec::true_score(p.clone(), cfg);
    let run_model = integrate_field(&model, &icfg, x1.as_slice(), &Augment::none())?;
    let run_true = integrate_field(&truth, &icfg, x1.as_slice(), &Augment::none())?;
    let deviation = (run_model.end_state() - run_true.end_state()).norm_squared();
    let min_x1 = run_model.states.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
    let g0_sq = cfg.diffusion_sq(0.0);
    let bound = (0.5 * eps * z0 * g0_sq * min_x1).powi(2);
    rec.record("deviation", deviation);
    rec.record("bound", bound);
    rec.diagnostic("min_x1", min_x1);
    rec.above("deviation_minus_bound", deviation - bound, 0.0);

    let trace = trace_invariance_check(&model, 0.5, &run_model.states)?;
    rec.below("trace_invariance", trace, 1e-12);

    let zero = FieldSpec::new(p.clone(), cfg, RemainderSpec::CurlQuadratic { epsilon: 0.0 })?;
    let run_zero = integrate_field(&zero, &icfg, x1.as_slice(), &Augment::none())?;
    rec.below(
        "deviation_at_zero_epsilon",
        (run_zero.end_state() - run_true.end_state()).norm_squared(),
        1e-24,
    );

    let p_min = p.diffuse(&cfg, cfg.t_min)?;
    let mut lik_err = 0.0f64;
    for x0 in p.sample(Diffusion::at(&cfg, cfg.t_min), 5, derive_seed(seed, "likelihood")) {
        let l = likelihood(&model, &IntegratorConfig::default(), x0.as_slice())?;
        lik_err = lik_err.max((l.log_p - p_min.log_density(x0.as_slice())?).abs());
    }
    // The trace is unchanged pointwise, but the curl moves the trajectory and its
    // end point, so the ODE likelihood is not exact: this remainder violates the
    // gauge condition.
    rec.diagnostic("likelihood_max_abs_error", lik_err);

    let mut traj = Table::new(["t", "x0", "x1", "x2", "x0_true", "x1_true", "x2_true"]);
    for ((t, m), s) in run_model.times.iter().zip(&run_model.states).zip(&run_true.states) {
        traj.push(vec![*t, m[0], m[1], m[2], s[0], s[1], s[2]]);
    }
    rec.tables.insert("curl_trajectory".into(), traj);
    Ok(rec.finish())
}

/// The variants of the commuting-flows construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommutingVariant {
    /// Rotation in the on-manifold block plus an off-manifold scaling: A is not symmetric.
    Rotation,
    /// A symmetric A, so the added field is conservative.
    Symmetric,
    /// An A mixing on- and off-manifold coordinates; the flows do not commute.
    NonCommuting,
}

impl CommutingVariant {
    fn name(self) -> &'static str {
        match self {
            CommutingVariant::Rotation => "commuting_flows",
            CommutingVariant::Symmetric => "commuting_flows_symmetric",
            CommutingVariant::NonCommuting => "commuting_flows_noncommuting",
        }
    }

    fn matrix(self) -> DMatrix<f64> {
        let entries = match self {
            CommutingVariant::Rotation => [0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.5],
            CommutingVariant::Symmetric => [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5],
            CommutingVariant::NonCommuting => [0.0, 1.0, 1.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
        };
        DMatrix::from_row_slice(3, 3, &entries)
    }
}

/// Sampling with u + A x where A commutes with the marginal covariances: the
/// result equals the true flow applied after exp(A), which preserves the data.
pub fn commuting_flows(variant: CommutingVariant, seed: u64) -> Result<ScenarioResult> {
    let mut rec = Recorder::new(variant.name(), 1e-6);
    rec.expected_fail = variant == CommutingVariant::NonCommuting;
    let cfg = ScheduleConfig::linear_drift(BetaSchedule::Linear {
        beta_min: 0.1,
        beta_max: 20.0,
    });
    let icfg = IntegratorConfig::default();
    let var0 = [1.0, 1.0, 0.0];
    let p = Arc::new(MixtureDensity::diagonal_gaussian(vec![0.0; 3], var0.to_vec())?);
    let a = variant.matrix();
    rec.diagnostic("a_asymmetry", (&a - a.transpose()).amax());

    let sigma = |t: f64| {
        let d = Diffusion::at(&cfg, t);
        DMatrix::from_diagonal(&DVector::from_iterator(3, var0.iter().map(|v| d.a * d.a * v + d.v)))
    };
    let bracket = (0..10)
        .map(|k| {
            let t = cfg.t_min + (1.0 - cfg.t_min) * k as f64 / 9.0;
            lie_bracket_linear(&sigma(t), &a).norm()
        })
        .fold(0.0, f64::max);
    rec.below("bracket_norm", bracket, 1e-12);

    let truth = FieldSpec::true_score(p.clone(), cfg);
    let u = ReversedFlow(&truth);
    let probe = p.sample(Diffusion::at(&cfg, 0.5), 5, derive_seed(seed, "lift"));
    let mut lifted = 0.0f64;
    for alpha in [1.0, 0.5] {
        let v = AffineLift {
            u: &u,
            a: a.clone(),
            alpha,
        };
        for tau in [0.0, 0.25, 0.5, 0.75, 1.0 - cfg.t_min] {
            for x in &probe {
                lifted = lifted.max(lifted_commutation_residual(&u, &v, alpha, x.as_slice(), tau)?.norm());
            }
        }
    }
    rec.below("lifted_residual", lifted, 1e-6);

    // ½ g² r = A x turns the reversed flow u into u + A x.
    let model = FieldSpec::new(
        p.clone(),
        cfg,
        RemainderSpec::LinearMatrix(MatrixOfTime::Scaled {
            matrix: &a * 2.0,
            scale: TimeScale::InverseDiffusionSq,
        }),
    )?;
    let phi_model = flow_map(&model, &icfg)?;
    let phi_true = flow_map(&truth, &icfg)?;
    let composed = &phi_true * (&a * (1.0 - cfg.t_min)).exp();
    rec.below("composition_error", rel_frobenius(&phi_model, &composed), 1e-6);

    let x1 = p.sample(Diffusion::at(&cfg, 1.0), ENSEMBLE_SIZE, derive_seed(seed, "ensemble"));
    let ends: Vec<DVector<f64>> = x1.iter().map(|x| &phi_model * x).collect();
    let target = sigma(cfg.t_min);
    let (_, cov) = empirical_moments(&ends);
    rec.below("covariance_rel_error", rel_frobenius(&cov, &target), 0.05);
    let off_rms = (ends.iter().map(|e| e[2] * e[2]).sum::<f64>() / ENSEMBLE_SIZE as f64).sqrt();
    rec.below("off_manifold_rms_ratio", off_rms / cfg.noise_std(cfg.t_min), 3.0);
    rec.below(
        "flow_map_mismatch",
        flow_map_mismatch(&model, &icfg, &phi_model, &x1[..DIRECT_SUBSET])?,
        FLOW_MAP_TOL,
    );
    let true_ends: Vec<DVector<f64>> = x1.iter().map(|x| &phi_true * x).collect();
    let (_, cov_true) = empirical_moments(&true_ends);
    rec.diagnostic("true_score_covariance_rel_error", rel_frobenius(&cov_true, &target));
    Ok(rec.finish())
}

/// One intrinsic-dimension case of the suite.
#[derive(Clone, Debug, PartialEq)]
pub struct IdCase {
    pub name: &'static str,
    pub spec: ManifoldSpec,
    pub true_d: usize,
    pub non_conservative: bool,
}

/// Gaussian 2-in-5, spheres with d = D/2 - 1 for D ∈ {4, 6, 8}, tori and swiss
/// rolls in D ∈ {3, 5}, and the Gaussian with a non-conservative remainder.
pub fn id_cases() -> Vec<IdCase> {
    let tangent = |kind, d, big_d| ManifoldSpec::new(kind, d, big_d).with_kernel(KernelKind::Tangent, 0.0);
    let case = |name, spec: ManifoldSpec| IdCase {
        name,
        true_d: spec.intrinsic_dim,
        spec,
        non_conservative: false,
    };
    vec![
        case("id_gaussian_2_in_5", tangent(ManifoldKind::EmbeddedGaussian, 2, 5)),
        case("id_sphere_d4", tangent(ManifoldKind::Sphere, 1, 4)),
        case("id_sphere_d6", tangent(ManifoldKind::Sphere, 2, 6)),
        case("id_sphere_d8", tangent(ManifoldKind::Sphere, 3, 8)),
        case("id_torus_d3", tangent(ManifoldKind::Torus, 2, 3)),
        case("id_torus_d5", tangent(ManifoldKind::Torus, 2, 5)),
        case("id_swiss_roll_d3", tangent(ManifoldKind::SwissRoll, 2, 3)),
        case("id_swiss_roll_d5", tangent(ManifoldKind::SwissRoll, 2, 5)),
        IdCase {
            non_conservative: true,
            ..case("id_non_conservative", tangent(ManifoldKind::EmbeddedGaussian, 2, 5))
        },
    ]
}

pub fn id_scenario(case: &IdCase, cfg: &IdConfig, seed: u64) -> Result<ScenarioResult> {
    let mut rec = Recorder::new(case.name, 0.9);
    rec.expected_fail = case.non_conservative;
    let remainder = if case.non_conservative {
        non_conservative_remainder(case.spec.intrinsic_dim, case.spec.ambient_dim)
    } else {
        RemainderSpec::Zero
    };
    let res = run_manifold_experiment(&case.spec, &remainder, cfg, seed)?;
    rec.record("true_d", case.true_d as f64);
    rec.within("modal_d", res.modal_d as f64, case.true_d as f64, case.true_d as f64);
    rec.within("agreement", res.agreement, 0.9, 1.0);
    rec.record("n_samples", res.n_samples as f64);
    rec.record("flagged", if res.flag.is_some() { 1.0 } else { 0.0 });
    rec.diagnostic("max_commutator", res.max_commutator);
    if let Some(flag) = &res.flag {
        rec.notes.push(flag.clone());
    }

    let big_d = case.spec.ambient_dim;
    let mut header = vec!["sample_id".to_string(), "d_hat".to_string()];
    header.extend((0..big_d).map(|i| format!("slope_{i}")));
    let mut table = Table::new(header);
    for (k, e) in res.estimates.iter().enumerate() {
        let mut row = vec![k as f64, e.d_hat as f64];
        row.extend(&e.slopes);
        table.push(row);
    }
    rec.tables.insert(case.name.to_string(), table);
    rec.documents.insert(
        format!("{}_aggregate", case.name),
        serde_json::json!({
            "modal_d": res.modal_d,
            "agreement": res.agreement,
            "n_samples": res.n_samples,
            "flag": res.flag,
            "spec": res.spec,
        }),
    );
    Ok(rec.finish())
}

/// Runs every intrinsic-dimension case.
pub fn id_suite(seed: u64) -> Vec<ScenarioResult> {
    id_cases()
        .par_iter()
        .map(|case| {
            guard(case.name, case.non_conservative, || {
                id_scenario(case, &IdConfig::default(), derive_seed(seed, case.name))
            })
        })
        .collect()
}

fn guard(name: &str, expected_fail: bool, f: impl FnOnce() -> Result<ScenarioResult>) -> ScenarioResult {
    f().unwrap_or_else(|e| ScenarioResult::failed(name, &e, expected_fail))
}

/// Scenario names in declaration order.
pub fn scenario_names() -> Vec<&'static str> {
    let mut names = vec![
        "section4_counterexample",
        "conservative_bad_generator",
        "curl_bad_generator",
        CommutingVariant::Rotation.name(),
        CommutingVariant::Symmetric.name(),
        CommutingVariant::NonCommuting.name(),
    ];
    names.extend(id_cases().iter().map(|c| c.name));
    names
}

/// Runs one scenario by name. Computation errors become failed results; only an
/// unknown name is an error.
pub fn run_scenario(name: &str, seed: u64) -> Result<ScenarioResult> {
    let seed = derive_seed(seed, name);
    let result = match name {
        "section4_counterexample" => guard(name, false, || section4_counterexample(seed)),
        "conservative_bad_generator" => guard(name, false, || conservative_bad_generator(seed)),
        "curl_bad_generator" => guard(name, false, || curl_bad_generator(seed)),
        _ => {
            let variant = [
                CommutingVariant::Rotation,
                CommutingVariant::Symmetric,
                CommutingVariant::NonCommuting,
            ]
            .into_iter()
            .find(|v| v.name() == name);
            if let Some(v) = variant {
                guard(name, v == CommutingVariant::NonCommuting, || commuting_flows(v, seed))
            } else if let Some(case) = id_cases().into_iter().find(|c| c.name == name) {
                guard(name, case.non_conservative, || {
                    id_scenario(&case, &IdConfig::default(), seed)
                })
            } else {
                return Err(Error::Unknown {
                    what: "scenario",
                    name: name.to_string(),
                    valid: scenario_names().join(", "),
                });
            }
        }
    };
    Ok(result)
}

/// Runs every scenario concurrently; results come back in declaration order.
pub fn run_all(seed: u64) -> Vec<ScenarioResult> {
    scenario_names()
        .par_iter()
        .map(|name| run_scenario(name, seed).expect("registered name"))
        .collect()
}

#[cfg(test)]
mod tests;
