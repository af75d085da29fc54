//! The probability-flow ODE and its augmentations: the divergence integral
//! (exact or Hutchinson), the sensitivity matrix Y_t, and the Liouville integral.
//!
//! Backward solves run in τ = 1 - t so the solver always marches forward; along
//! the way `dx/dτ = -f̃`, `dY/dτ = -∇f̃ Y`, `dL/dτ = -tr ∇f̃`, while the log-density
//! accumulator gains `+∇·f̃` so that at time t it holds `∫_t^1 ∇·f̃ ds`.

pub mod hutchinson;
pub mod ode;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{Diffusion, Scratch};
use crate::error::{Error, Result};
use crate::fields::{FieldSpec, VectorField};
use crate::schedule::{ScheduleConfig, Spacing, TimeGrid};
pub use hutchinson::{hutchinson_trace, hutchinson_trace_action, ProbeDist, TraceEstimate};
pub use ode::SolverStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// From t = 1 down to t_min.
    Backward,
    /// From t_min up to 1.
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub n_steps: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub direction: Direction,
    /// Number of output times, including both ends.
    pub n_checkpoints: usize,
    pub spacing: Spacing,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45Adaptive,
            n_steps: 1000,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            direction: Direction::Backward,
            n_checkpoints: 64,
            spacing: Spacing::LogUniform,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("integrator.n_steps", "must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("integrator.rel_tol", "tolerances must be positive"));
        }
        if self.n_checkpoints < 2 {
            return Err(Error::invalid("integrator.n_checkpoints", "need at least 2"));
        }
        Ok(())
    }

    pub fn with_checkpoints(mut self, n: usize) -> Self {
        self.n_checkpoints = n;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn rk4(n_steps: usize) -> Self {
        IntegratorConfig {
            method: Method::Rk4Fixed,
            n_steps,
            ..Self::default()
        }
    }

    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        IntegratorConfig {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HutchinsonConfig {
    pub n_probes: usize,
    pub probe_dist: ProbeDist,
    pub seed: u64,
}

/// Which extra quantities to integrate alongside the state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Augment {
    pub logdet: bool,
    pub sensitivity: bool,
    pub liouville: bool,
    /// Replace the exact divergence by a Hutchinson estimate with fixed probes.
    pub hutchinson: Option<HutchinsonConfig>,
}

impl Augment {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn logdet() -> Self {
        Augment {
            logdet: true,
            ..Self::default()
        }
    }

    pub fn sensitivity() -> Self {
        Augment {
            sensitivity: true,
            liouville: true,
            ..Self::default()
        }
    }

    pub fn all() -> Self {
        Augment {
            logdet: true,
            sensitivity: true,
            liouville: true,
            hutchinson: None,
        }
    }
}

/// A checkpointed solution of the augmented ODE.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub direction: Direction,
    /// Output times in the order visited.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Accumulated divergence integral at each output.
    pub logdet: Option<Vec<f64>>,
    /// Sensitivity matrix at each output.
    pub y: Option<Vec<DMatrix<f64>>>,
    /// Accumulated ∫ tr ∇f̃ in the direction of integration.
    pub liouville: Option<Vec<f64>>,
    pub stats: SolverStats,
}

impl TrajectoryRecord {
    pub fn end_state(&self) -> &DVector<f64> {
        self.states.last().expect("records hold at least two outputs")
    }

    pub fn logdet_increment(&self) -> Option<f64> {
        self.logdet.as_ref().and_then(|v| v.last().copied())
    }

    pub fn liouville_integral(&self) -> Option<f64> {
        self.liouville.as_ref().and_then(|v| v.last().copied())
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
}

struct Layout {
    logdet: Option<usize>,
    y: Option<usize>,
    liouville: Option<usize>,
    len: usize,
    need_jacobian: bool,
}

impl Layout {
    fn new(n: usize, aug: &Augment) -> Self {
        let mut len = n;
        let mut take = |flag: bool, size: usize| {
            flag.then(|| {
                let at = len;
                len += size;
                at
            })
        };
        let logdet = take(aug.logdet || aug.hutchinson.is_some(), 1);
        let y = take(aug.sensitivity, n * n);
        let liouville = take(aug.liouville, 1);
        Layout {
            logdet,
            y,
            liouville,
            len,
            need_jacobian: logdet.is_some() || y.is_some() || liouville.is_some(),
        }
    }
}

/// Output times for one solve, in the order visited.
pub fn output_times(schedule: &ScheduleConfig, icfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(schedule.t_min, icfg.n_checkpoints, icfg.spacing)?;
    let mut times = grid.checkpoints().to_vec();
    if icfg.direction == Direction::Forward {
        times.reverse();
    }
    Ok(times)
}

/// Integrates `field` between 1 and `schedule.t_min` with the requested augmentations.
pub fn integrate<V: VectorField>(
    field: &V,
    schedule: &ScheduleConfig,
    icfg: &IntegratorConfig,
    x_init: &[f64],
    aug: &Augment,
) -> Result<TrajectoryRecord> {
    icfg.validate()?;
    let n = field.dim();
    if x_init.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x_init.len(),
        });
    }
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial condition must be finite".into()));
    }
    if !(schedule.t_min > 0.0 && schedule.t_min < 1.0) {
        return Err(Error::invalid("schedule.t_min", "need 0 < t_min < 1"));
    }
    let times = output_times(schedule, icfg)?;
    let backward = icfg.direction == Direction::Backward;
    let sign = if backward { -1.0 } else { 1.0 };
    let to_s = |t: f64| if backward { 1.0 - t } else { t };
    let to_t = move |s: f64| if backward { 1.0 - s } else { s };
    let outputs: Vec<f64> = times.iter().map(|&t| to_s(t)).collect();

    let layout = Layout::new(n, aug);
    let probes = aug
        .hutchinson
        .map(|h| {
            if h.n_probes == 0 {
                Err(Error::invalid("hutchinson.n_probes", "must be positive"))
            } else {
                Ok(hutchinson::draw_probes(n, h.n_probes, h.probe_dist, h.seed))
            }
        })
        .transpose()?;

    let mut state = vec![0.0; layout.len];
    state[..n].copy_from_slice(x_init);
    if let Some(y0) = layout.y {
        for i in 0..n {
            state[y0 + i * n + i] = 1.0;
        }
    }

    let mut ws = Scratch::new();
    let mut jac = vec![0.0; n * n];
    let rhs = |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        // Guard against rounding pushing τ past the end of the interval.
        let t = to_t(s).clamp(0.0, 1.0);
        let x = &y[..n];
        if layout.need_jacobian {
            field.rhs_jacobian(x, t, &mut dy[..n], &mut jac, &mut ws)?;
        } else {
            field.rhs(x, t, &mut dy[..n], &mut ws)?;
        }
        for v in &mut dy[..n] {
            *v *= sign;
        }
        if let Some(k) = layout.logdet {
            dy[k] = match &probes {
                Some(p) => hutchinson::mean_quadratic_form(&jac, p, n),
                None => (0..n).map(|i| jac[i * n + i]).sum(),
            };
        }
        if let Some(k) = layout.liouville {
            dy[k] = sign * (0..n).map(|i| jac[i * n + i]).sum::<f64>();
        }
        if let Some(y0) = layout.y {
            let ym = &y[y0..y0 + n * n];
            let out = &mut dy[y0..y0 + n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += jac[i * n + k] * ym[k * n + j];
                    }
                    out[i * n + j] = sign * acc;
                }
            }
        }
        Ok(())
    };

    let mut record = TrajectoryRecord {
        direction: icfg.direction,
        times: times.clone(),
        states: Vec::with_capacity(times.len()),
        logdet: layout.logdet.map(|_| Vec::with_capacity(times.len())),
        y: layout.y.map(|_| Vec::with_capacity(times.len())),
        liouville: layout.liouville.map(|_| Vec::with_capacity(times.len())),
        stats: SolverStats::default(),
    };
    let on_output = |_k: usize, y: &[f64]| {
        record.states.push(DVector::from_column_slice(&y[..n]));
        if let (Some(k), Some(v)) = (layout.logdet, record.logdet.as_mut()) {
            v.push(y[k]);
        }
        if let (Some(k), Some(v)) = (layout.liouville, record.liouville.as_mut()) {
            v.push(y[k]);
        }
        if let (Some(k), Some(v)) = (layout.y, record.y.as_mut()) {
            v.push(DMatrix::from_row_slice(n, n, &y[k..k + n * n]));
        }
    };
    let stats = match icfg.method {
        Method::Rk4Fixed => ode::rk4(rhs, &mut state, &outputs, icfg.n_steps, to_t, on_output)?,
        Method::Rk45Adaptive => ode::dopri5(rhs, &mut state, &outputs, icfg.rel_tol, icfg.abs_tol, to_t, on_output)?,
    };
    record.stats = stats;
    Ok(record)
}

/// [`integrate`] applied to the probability flow of a model field.
pub fn integrate_field(
    fs: &FieldSpec,
    icfg: &IntegratorConfig,
    x_init: &[f64],
    aug: &Augment,
) -> Result<TrajectoryRecord> {
    integrate(&fs.flow(), &fs.schedule, icfg, x_init, aug)
}

/// Result of the instantaneous change-of-variables likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct Likelihood {
    /// log p(x₀, t_min) according to the model field.
    pub log_p: f64,
    pub x1: DVector<f64>,
    pub divergence_integral: f64,
    pub terminal_log_p: f64,
}

/// log p(x₀, t_min) = log p(x₁, 1) + ∫_{t_min}^1 ∇·f̃ dt, integrating forward from x₀.
pub fn likelihood(fs: &FieldSpec, icfg: &IntegratorConfig, x0: &[f64]) -> Result<Likelihood> {
    likelihood_with(fs, icfg, x0, None)
}

/// As [`likelihood`], optionally with a Hutchinson divergence estimate.
pub fn likelihood_with(
    fs: &FieldSpec,
    icfg: &IntegratorConfig,
    x0: &[f64],
    hutchinson: Option<HutchinsonConfig>,
) -> Result<Likelihood> {
    let icfg = icfg.with_direction(Direction::Forward).with_checkpoints(2);
    let aug = Augment {
        logdet: true,
        hutchinson,
        ..Augment::none()
    };
    let rec = integrate_field(fs, &icfg, x0, &aug)?;
    let x1 = rec.end_state().clone();
    let divergence_integral = rec.logdet_increment().expect("logdet requested");
    let terminal_log_p =
        fs.density
            .log_density_at(x1.as_slice(), Diffusion::at(&fs.schedule, 1.0), &mut Scratch::new())?;
    Ok(Likelihood {
        log_p: terminal_log_p + divergence_integral,
        x1,
        divergence_integral,
        terminal_log_p,
    })
}

/// |log|det Y_end| - ∫ tr ∇f̃|.
pub fn liouville_check(rec: &TrajectoryRecord) -> Result<f64> {
    let (Some(ys), Some(l)) = (rec.y.as_ref(), rec.liouville_integral()) else {
        return Err(Error::invalid(
            "record",
            "needs the sensitivity matrix and the Liouville integral",
        ));
    };
    let y = ys.last().expect("records hold at least two outputs");
    Ok((log_abs_det(y)? - l).abs())
}

/// log|det M| from an LU factorisation.
pub fn log_abs_det(m: &DMatrix<f64>) -> Result<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Divergence { t: f64::NAN });
        }
        acc += d.ln();
    }
    Ok(acc)
}

/// Integrates every initial condition independently, preserving order.
pub fn integrate_ensemble<V: VectorField>(
    field: &V,
    schedule: &ScheduleConfig,
    icfg: &IntegratorConfig,
    x_inits: &[DVector<f64>],
    aug: &Augment,
) -> Result<Vec<TrajectoryRecord>> {
    x_inits
        .par_iter()
        .map(|x| integrate(field, schedule, icfg, x.as_slice(), aug))
        .collect()
}

/// End states of backward solves from each initial condition.
pub fn end_states(fs: &FieldSpec, icfg: &IntegratorConfig, x_inits: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let icfg = icfg.with_checkpoints(2).with_direction(Direction::Backward);
    let flow = fs.flow();
    x_inits
        .par_iter()
        .map(|x| integrate(&flow, &fs.schedule, &icfg, x.as_slice(), &Augment::none()).map(|r| r.end_state().clone()))
        .collect()
}

/// Empirical mean and unbiased covariance.
pub fn empirical_moments(xs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs[0].len();
    let m = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(n), |acc, x| acc + x) / m;
    let mut cov = DMatrix::zeros(n, n);
    for x in xs {
        let r = x - &mean;
        cov += &r * r.transpose();
    }
    (mean, cov / (m - 1.0).max(1.0))
}

#[cfg(test)]
mod tests;
