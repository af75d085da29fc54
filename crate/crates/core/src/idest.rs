//! Intrinsic dimension from the singular values of the flow sensitivity Y_t.
//!
//! Off-manifold singular values of Y_t shrink with the noise amplitude as
//! t → t_min while on-manifold ones level off; counting the flat ones gives d.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{Diffusion, ManifoldSpec};
use crate::error::{Error, Result};
use crate::fields::{FieldSpec, MatrixOfTime, RemainderSpec, TimeScale, VectorField};
use crate::flow::{integrate_field, Augment, Direction, IntegratorConfig, TrajectoryRecord};
use crate::quadrature::cumulative_quadratic;
use crate::rng::{derive_seed, stream_rng};
use crate::schedule::{ScheduleConfig, Spacing};

/// Flag attached to estimates computed from a field with non-symmetric Jacobian.
pub const NON_CONSERVATIVE_FLAG: &str = "non-conservative field: estimate unreliable";

/// Lower bound on automatic kernel bandwidths, in units of the noise amplitude at t_min.
pub const KERNEL_NOISE_MULTIPLE: f64 = 4.0;

/// Singular values of Y_t along one trajectory, in increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularTrajectory {
    pub ts: Vec<f64>,
    /// Noise amplitude √v(t) at each checkpoint.
    pub noise_std: Vec<f64>,
    /// One row per checkpoint, sorted descending.
    pub sv: Vec<Vec<f64>>,
    /// Eigenvalues of the symmetric ∇f̃, ascending; present only when every
    /// checkpoint Jacobian is symmetric.
    pub mu: Option<Vec<Vec<f64>>>,
    /// ‖[P_t, ∇f̃]‖_F with P_t = Y Yᵀ, when the field was supplied.
    pub commutator: Option<Vec<f64>>,
}

/// SVD of Y at each checkpoint of `rec`. With `field` given, also records the
/// spectrum of ∇f̃ (if symmetric) and the commutator diagnostic.
pub fn singular_trajectories(rec: &TrajectoryRecord, field: Option<&FieldSpec>) -> Result<SingularTrajectory> {
    let ys = rec
        .y
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory", "record carries no sensitivity matrices"))?;
    let n = rec.dim();
    let mut order: Vec<usize> = (0..rec.times.len()).collect();
    order.sort_by(|&a, &b| rec.times[a].total_cmp(&rec.times[b]));

    let mut ts = Vec::with_capacity(order.len());
    let mut sv = Vec::with_capacity(order.len());
    let mut mu = Vec::with_capacity(order.len());
    let mut commutator = Vec::with_capacity(order.len());
    let mut symmetric = true;
    for &k in &order {
        let t = rec.times[k];
        let y = &ys[k];
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        let mut s: Vec<f64> = y.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        ts.push(t);
        sv.push(s);

        if let Some(fs) = field {
            let mut out = vec![0.0; n];
            let mut jac = vec![0.0; n * n];
            fs.flow()
                .rhs_jacobian(rec.states[k].as_slice(), t, &mut out, &mut jac, &mut Default::default())?;
            let j = DMatrix::from_row_slice(n, n, &jac);
            let p = y * y.transpose();
            commutator.push((&j * &p - &p * &j).norm());
            if (&j - j.transpose()).amax() > 1e-9 * j.amax().max(1.0) {
                symmetric = false;
            }
            if symmetric {
                let mut e: Vec<f64> = SymmetricEigen::new((&j + j.transpose()) * 0.5)
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect();
                e.sort_by(f64::total_cmp);
                mu.push(e);
            }
        }
    }
    let noise_std = match field {
        Some(fs) => ts.iter().map(|&t| fs.schedule.noise_std(t)).collect(),
        None => vec![f64::NAN; ts.len()],
    };
    Ok(SingularTrajectory {
        ts,
        noise_std,
        sv,
        mu: (field.is_some() && symmetric).then_some(mu),
        commutator: field.is_some().then_some(commutator),
    })
}

impl SingularTrajectory {
    pub fn dim(&self) -> usize {
        self.sv.first().map_or(0, Vec::len)
    }

    /// Replaces the noise amplitudes, e.g. when the record was produced without a field.
    pub fn with_schedule(mut self, schedule: &ScheduleConfig) -> Self {
        self.noise_std = self.ts.iter().map(|&t| schedule.noise_std(t)).collect();
        self
    }
}

/// Largest relative error of λ_i(t) = λ_i(ε) exp(-2 ∫_t^ε μ_i) against the
/// integrated λ_i(t) = sv_i(t)², over checkpoints t ≤ ε = ts[eps_index].
///
/// Eigenvalues μ ascending are paired with singular values descending.
pub fn lemma_check(st: &SingularTrajectory, eps_index: usize) -> Result<f64> {
    let mu = st.mu.as_ref().ok_or(Error::NotConservative)?;
    if eps_index >= st.ts.len() {
        return Err(Error::invalid("eps_index", "outside the checkpoint range"));
    }
    if st.ts[0] <= 0.0 {
        return Err(Error::invalid("trajectory", "checkpoints must be positive"));
    }
    let log_t: Vec<f64> = st.ts.iter().map(|t| t.ln()).collect();
    let mut worst = 0.0f64;
    for i in 0..st.dim() {
        // ∫ μ dt = ∫ μ t d(ln t), smoother on log-spaced checkpoints.
        let integrand: Vec<f64> = st.ts.iter().zip(mu).map(|(t, m)| m[i] * t).collect();
        let cum = cumulative_quadratic(&log_t, &integrand);
        let lambda_eps = st.sv[eps_index][i].powi(2);
        for k in 0..=eps_index {
            let predicted = lambda_eps * (-2.0 * (cum[eps_index] - cum[k])).exp();
            let actual = st.sv[k][i].powi(2);
            worst = worst.max((predicted - actual).abs() / actual);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdEstimate {
    pub d_hat: usize,
    /// Log-log slope of each singular value against the noise amplitude.
    pub slopes: Vec<f64>,
    pub threshold: f64,
    /// Per-sample estimates when this is an ensemble aggregate.
    pub per_sample: Vec<usize>,
}

/// Least-squares slope of log sv_i on log √v(t) over the first `fit_decades`
/// decades of time above t_min; singular values with |slope| below the
/// threshold count as saturated.
pub fn estimate_id(st: &SingularTrajectory, slope_threshold: f64, fit_decades: f64) -> Result<IdEstimate> {
    if !(slope_threshold > 0.0) || !(fit_decades > 0.0) {
        return Err(Error::invalid("id", "slope_threshold and fit_decades must be positive"));
    }
    let Some((&t0, &t_last)) = st.ts.first().zip(st.ts.last()) else {
        return Err(Error::InsufficientCheckpoints("empty trajectory".into()));
    };
    let t_hi = t0 * 10f64.powf(fit_decades);
    if t_last < t_hi * (1.0 - 1e-9) {
        return Err(Error::InsufficientCheckpoints(format!(
            "checkpoints span {:.2} decades, need {fit_decades}",
            (t_last / t0).log10()
        )));
    }
    let window: Vec<usize> = (0..st.ts.len()).filter(|&k| st.ts[k] <= t_hi * (1.0 + 1e-9)).collect();
    if window.len() < 3 {
        return Err(Error::InsufficientCheckpoints(format!(
            "{} checkpoints in the fit window, need at least 3",
            window.len()
        )));
    }
    if window.iter().any(|&k| !(st.noise_std[k] > 0.0)) {
        return Err(Error::invalid("trajectory", "noise amplitudes missing or non-positive"));
    }
    let xs: Vec<f64> = window.iter().map(|&k| st.noise_std[k].ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientCheckpoints(
            "noise amplitude constant over the fit window".into(),
        ));
    }
    let slopes: Vec<f64> = (0..st.dim())
        .map(|i| {
            let ys: Vec<f64> = window.iter().map(|&k| st.sv[k][i].ln()).collect();
            let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (x - x_mean) * (y - y_mean))
                .sum::<f64>()
                / sxx
        })
        .collect();
    let d_hat = slopes.iter().filter(|s| s.abs() < slope_threshold).count();
    Ok(IdEstimate {
        d_hat,
        slopes,
        threshold: slope_threshold,
        per_sample: Vec::new(),
    })
}

/// Most frequent value, ties broken towards the smaller one, and its share.
pub fn modal(values: &[usize]) -> (usize, f64) {
    let mut counts = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let mut best = (0, 0);
    for (&v, &c) in &counts {
        if c > best.1 {
            best = (v, c);
        }
    }
    (best.0, best.1 as f64 / values.len().max(1) as f64)
}

/// Settings for an intrinsic-dimension experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct IdConfig {
    pub schedule: ScheduleConfig,
    pub integrator: IntegratorConfig,
    pub n_samples: usize,
    pub slope_threshold: f64,
    pub fit_decades: f64,
}

impl Default for IdConfig {
    fn default() -> Self {
        IdConfig {
            schedule: ScheduleConfig::default().with_t_min(1e-5),
            integrator: IntegratorConfig {
                n_checkpoints: 81,
                spacing: Spacing::LogUniform,
                ..IntegratorConfig::adaptive(1e-6, 1e-9)
            },
            n_samples: 20,
            slope_threshold: 0.5,
            fit_decades: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub spec: ManifoldSpec,
    pub estimates: Vec<IdEstimate>,
    pub modal_d: usize,
    pub agreement: f64,
    pub n_samples: usize,
    pub conservative: bool,
    /// Largest ‖[P_t, ∇f̃]‖_F over all checkpoints and samples.
    pub max_commutator: f64,
    pub flag: Option<String>,
}

/// Builds the kernel density for `spec`, integrates `n_samples` draws from p_1
/// backwards with sensitivities and estimates the dimension of each.
pub fn run_manifold_experiment(
    spec: &ManifoldSpec,
    remainder: &RemainderSpec,
    cfg: &IdConfig,
    seed: u64,
) -> Result<ExperimentResult> {
    // Below the noise floor a kernel density looks zero-dimensional, so automatic
    // bandwidths are kept a few noise amplitudes above σ(t_min).
    let floor = KERNEL_NOISE_MULTIPLE * cfg.schedule.noise_std(cfg.schedule.t_min);
    let density = Arc::new(spec.build_density_with_floor(derive_seed(seed, "centers"), floor)?);
    let fs = FieldSpec::new(density.clone(), cfg.schedule, remainder.clone())?;
    let icfg = cfg.integrator.with_direction(Direction::Backward);
    icfg.validate()?;
    let init_seed = derive_seed(seed, "init");
    let terminal = Diffusion::at(&cfg.schedule, 1.0);
    let runs = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let x1 = density.sample_one(terminal, &mut stream_rng(init_seed, i as u64));
            let rec = integrate_field(&fs, &icfg, x1.as_slice(), &Augment::sensitivity())?;
            let st = singular_trajectories(&rec, Some(&fs))?;
            let est = estimate_id(&st, cfg.slope_threshold, cfg.fit_decades)?;
            let comm = st
                .commutator
                .as_ref()
                .map_or(0.0, |c| c.iter().fold(0.0f64, |m, v| m.max(*v)));
            Ok((est, st.mu.is_some(), comm))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_sample: Vec<usize> = runs.iter().map(|(e, _, _)| e.d_hat).collect();
    let (modal_d, agreement) = modal(&per_sample);
    let conservative = runs.iter().all(|(_, c, _)| *c);
    let max_commutator = runs.iter().fold(0.0f64, |m, (_, _, c)| m.max(*c));
    Ok(ExperimentResult {
        spec: spec.clone(),
        estimates: runs.into_iter().map(|(e, _, _)| e).collect(),
        modal_d,
        agreement,
        n_samples: cfg.n_samples,
        conservative,
        max_commutator,
        flag: (!conservative).then(|| NON_CONSERVATIVE_FLAG.to_string()),
    })
}

/// A non-conservative remainder for a Gaussian on the first `d` of `big_d`
/// coordinates: (P + K)/v(t), where P projects onto the off-manifold coordinates
/// and K is an antisymmetric coupling between on- and off-manifold coordinates.
/// P/v(t) cancels the off-manifold contraction of the score, so every singular
/// value saturates.
pub fn non_conservative_remainder(d: usize, big_d: usize) -> RemainderSpec {
    let mut m = DMatrix::zeros(big_d, big_d);
    for j in d..big_d {
        m[(j, j)] = 1.0;
        for i in 0..d {
            m[(i, j)] = 1.0;
            m[(j, i)] = -1.0;
        }
    }
    RemainderSpec::LinearMatrix(MatrixOfTime::Scaled {
        matrix: m,
        scale: TimeScale::InverseMarginalVariance,
    })
}

#[cfg(test)]
mod tests;
