//! Forward SDE schedules and time bookkeeping.
//!
//! Two families are supported: the variance-exploding schedule `f = 0`,
//! `g(t) = g_base^t`, and the linear-drift schedule `f = -β(t) x / 2`, `g² = β`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[serde(alias = "ve")]
    VarianceExploding,
    #[serde(alias = "vp")]
    LinearDrift,
}

/// β(t) for the linear-drift schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "beta_kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant {
        beta: f64,
    },
    /// β(t) = beta_min + t (beta_max - beta_min).
    Linear {
        beta_min: f64,
        beta_max: f64,
    },
}

impl BetaSchedule {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            BetaSchedule::Constant { beta } => beta,
            BetaSchedule::Linear { beta_min, beta_max } => beta_min + t * (beta_max - beta_min),
        }
    }

    /// ∫₀ᵗ β(s) ds.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            BetaSchedule::Constant { beta } => beta * t,
            BetaSchedule::Linear { beta_min, beta_max } => beta_min * t + 0.5 * (beta_max - beta_min) * t * t,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaSchedule::Constant { beta } => beta.is_finite() && beta > 0.0,
            BetaSchedule::Linear { beta_min, beta_max } => {
                beta_min.is_finite() && beta_max.is_finite() && beta_min >= 0.0 && beta_max > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "schedule.beta",
                "β must be finite, nonnegative and positive somewhere on (0, 1]",
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Base of g(t) = g_base^t (variance exploding).
    pub g_base: f64,
    /// β(t) (linear drift).
    pub beta: BetaSchedule,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::variance_exploding(25.0)
    }
}

impl ScheduleConfig {
    pub fn variance_exploding(g_base: f64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::VarianceExploding,
            g_base,
            beta: BetaSchedule::Linear {
                beta_min: 0.1,
                beta_max: 20.0,
            },
            t_min: 1e-3,
            t_max: 1.0,
        }
    }

    pub fn linear_drift(beta: BetaSchedule) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::LinearDrift,
            g_base: 25.0,
            beta,
            t_min: 1e-3,
            t_max: 1.0,
        }
    }

    pub fn with_t_min(mut self, t_min: f64) -> Self {
        self.t_min = t_min;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(Error::invalid(
                "schedule.t_min",
                format!(
                    "need 0 < t_min < t_max <= 1, got t_min = {}, t_max = {}",
                    self.t_min, self.t_max
                ),
            ));
        }
        match self.kind {
            ScheduleKind::VarianceExploding => {
                if !(self.g_base.is_finite() && self.g_base > 0.0) {
                    return Err(Error::invalid(
                        "schedule.g_base",
                        format!("must be a positive finite number, got {}", self.g_base),
                    ));
                }
                Ok(())
            }
            ScheduleKind::LinearDrift => {
                self.beta.validate()?;
                if self.beta.value(self.t_min) <= 0.0 {
                    return Err(Error::invalid(
                        "schedule.beta",
                        "β(t_min) must be positive so that g(t) > 0 on [t_min, 1]",
                    ));
                }
                Ok(())
            }
        }
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(format!("time {t} outside [0, 1]")))
        }
    }

    /// σ²(t) = ∫₀ᵗ g²(s) ds.
    pub fn noise_scale(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.noise_scale_unchecked(t))
    }

    pub(crate) fn noise_scale_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => {
                let l = self.g_base.ln();
                if l == 0.0 {
                    t
                } else {
                    (2.0 * t * l).exp_m1() / (2.0 * l)
                }
            }
            ScheduleKind::LinearDrift => self.beta.integral(t),
        }
    }

    /// g²(t).
    pub fn diffusion_sq(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => (2.0 * t * self.g_base.ln()).exp(),
            ScheduleKind::LinearDrift => self.beta.value(t),
        }
    }

    /// Scalar c(t) with f(x, t) = c(t) x.
    pub fn drift_coefficient(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => 0.0,
            ScheduleKind::LinearDrift => -0.5 * self.beta.value(t),
        }
    }

    /// f(x, t).
    pub fn drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("drift evaluated at a non-finite point".into()));
        }
        let c = self.drift_coefficient(t);
        Ok(x.iter().map(|v| c * v).collect())
    }

    /// α(t): the transition kernel is N(α(t) x₀, v(t) I).
    pub fn mean_scale(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => 1.0,
            ScheduleKind::LinearDrift => (-0.5 * self.beta.integral(t)).exp(),
        }
    }

    /// v(t), the variance of the transition kernel.
    pub fn marginal_variance(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => self.noise_scale_unchecked(t),
            ScheduleKind::LinearDrift => -(-self.beta.integral(t)).exp_m1(),
        }
    }

    /// √v(t): the amplitude of the noise added to the data by time t.
    pub fn noise_std(&self, t: f64) -> f64 {
        self.marginal_variance(t).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    LogUniform,
}

/// Output times of a backward solve, from 1 down to t_min.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    checkpoints: Vec<f64>,
    spacing: Spacing,
}

impl TimeGrid {
    pub fn new(t_min: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::invalid("grid.t_min", format!("need 0 < t_min < 1, got {t_min}")));
        }
        if n < 2 {
            return Err(Error::invalid("grid.n_checkpoints", "need at least 2 checkpoints"));
        }
        let last = (n - 1) as f64;
        let mut checkpoints: Vec<f64> = (0..n)
            .map(|k| {
                let u = k as f64 / last;
                match spacing {
                    Spacing::Linear => 1.0 - u * (1.0 - t_min),
                    Spacing::LogUniform => (u * t_min.ln()).exp(),
                }
            })
            .collect();
        checkpoints[0] = 1.0;
        checkpoints[n - 1] = t_min;
        Ok(TimeGrid { checkpoints, spacing })
    }

    /// Builds a grid from explicit times, checking the invariants.
    pub fn from_checkpoints(checkpoints: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if checkpoints.len() < 2 || checkpoints[0] != 1.0 {
            return Err(Error::invalid("grid", "must start at 1 and hold at least 2 times"));
        }
        if checkpoints.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("grid", "checkpoints must be strictly decreasing"));
        }
        if *checkpoints.last().unwrap() <= 0.0 {
            return Err(Error::invalid("grid", "t_min must be positive"));
        }
        Ok(TimeGrid { checkpoints, spacing })
    }

    pub fn checkpoints(&self) -> &[f64] {
        &self.checkpoints
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn t_min(&self) -> f64 {
        *self.checkpoints.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use proptest::prelude::*;

    fn ve() -> ScheduleConfig {
        ScheduleConfig::variance_exploding(25.0)
    }

    #[test]
    fn noise_scale_reference_values() {
        let cfg = ve();
        assert_eq!(cfg.noise_scale(0.0).unwrap(), 0.0);
        // (625 - 1) / (2 ln 25) and (25 - 1) / (2 ln 25), evaluated independently.
        let l = 25f64.ln();
        assert!((cfg.noise_scale(1.0).unwrap() - 624.0 / (2.0 * l)).abs() < 1e-12);
        assert!((cfg.noise_scale(1.0).unwrap() - 96.928_25).abs() < 1e-4);
        assert!((cfg.noise_scale(0.5).unwrap() - 3.728_01).abs() < 1e-5);
        assert!(cfg.noise_scale(1.5).is_err());
        assert!(cfg.noise_scale(-0.1).is_err());
    }

    #[test]
    fn drift_examples() {
        assert_eq!(ve().drift(&[1.0, 2.0], 0.3).unwrap(), vec![0.0, 0.0]);
        let c = ScheduleConfig::linear_drift(BetaSchedule::Constant { beta: 2.0 });
        assert_eq!(c.drift(&[1.0, 0.0], 0.5).unwrap(), vec![-1.0, 0.0]);
        let l = ScheduleConfig::linear_drift(BetaSchedule::Linear {
            beta_min: 0.0,
            beta_max: 1.0,
        });
        assert_eq!(l.drift(&[2.0, 2.0], 0.5).unwrap(), vec![-0.5, -0.5]);
    }

    #[test]
    fn linear_drift_kernel_matches_its_ode() {
        // v' = -β v + β with v(0) = 0 and α' = -β α / 2 with α(0) = 1.
        let cfg = ScheduleConfig::linear_drift(BetaSchedule::Linear {
            beta_min: 0.1,
            beta_max: 20.0,
        });
        let h = 1e-6;
        for &t in &[0.1, 0.4, 0.9] {
            let dv = (cfg.marginal_variance(t + h) - cfg.marginal_variance(t - h)) / (2.0 * h);
            let b = cfg.beta.value(t);
            assert!((dv - (-b * cfg.marginal_variance(t) + b)).abs() < 1e-6);
            let da = (cfg.mean_scale(t + h) - cfg.mean_scale(t - h)) / (2.0 * h);
            assert!((da + 0.5 * b * cfg.mean_scale(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(ve().validate().is_ok());
        assert!(ve().with_t_min(0.0).validate().is_err());
        assert!(ve().with_t_min(1.0).validate().is_err());
        let mut c = ve();
        c.g_base = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_invariants() {
        for spacing in [Spacing::Linear, Spacing::LogUniform] {
            let g = TimeGrid::new(1e-3, 64, spacing).unwrap();
            assert_eq!(g.checkpoints()[0], 1.0);
            assert_eq!(g.t_min(), 1e-3);
            assert!(g.checkpoints().windows(2).all(|w| w[1] < w[0]));
        }
        assert!(TimeGrid::from_checkpoints(vec![1.0, 0.5, 0.5], Spacing::Linear).is_err());
    }

    proptest! {
        #[test]
        fn noise_scale_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, g in 1.5f64..40.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let cfg = ScheduleConfig::variance_exploding(g);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(cfg.noise_scale(lo).unwrap() < cfg.noise_scale(hi).unwrap());
        }

        #[test]
        fn closed_form_matches_quadrature(t in 0.0f64..1.0) {
            let cfg = ve();
            let exact = cfg.noise_scale(t).unwrap();
            let num = adaptive_simpson(|s| cfg.diffusion_sq(s), 0.0, t, 1e-13).unwrap();
            prop_assert!((exact - num).abs() <= 1e-10 * exact.max(1e-300) + 1e-15);
        }
    }
}
