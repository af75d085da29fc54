//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//!
//! [schedule]
//! kind = "variance_exploding"   # or "linear_drift"
//! g_base = 25.0
//! beta_kind = "linear"          # linear drift only; or "constant" with `beta`
//! beta_min = 0.1
//! beta_max = 20.0
//! t_min = 1e-3
//!
//! [density]                     # or a [manifold] table
//! kind = "diagonal_gaussian"
//! mean = [0.0, 0.0]
//! variances = [1.0, 4.0]
//!
//! [remainder]
//! kind = "section4"
//!
//! [integrator]
//! method = "rk45_adaptive"
//! rel_tol = 1e-8
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use gaugeflow::fields::{MatrixOfTime, TimeScale};
use gaugeflow::idest::{non_conservative_remainder, IdConfig};
use gaugeflow::{
    BetaSchedule, FieldSpec, IntegratorConfig, ManifoldKind, ManifoldSpec, MixtureDensity, RemainderSpec,
    ScheduleConfig, ScheduleKind,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub density: Option<DensitySection>,
    pub manifold: Option<ManifoldSpec>,
    #[serde(default)]
    pub remainder: RemainderSection,
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub gauge: GaugeSection,
    #[serde(default)]
    pub id: IdSection,
}

/// Schedule keys, each overriding the default of the command.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: Option<ScheduleKind>,
    pub g_base: Option<f64>,
    pub beta_kind: Option<BetaKind>,
    pub beta: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub t_min: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    Constant,
    Linear,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySection {
    DiagonalGaussian {
        mean: Vec<f64>,
        variances: Vec<f64>,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemainderSection {
    #[default]
    Zero,
    /// Rotation in coordinates (0, 1) of a diagonal Gaussian.
    Section4,
    VarianceRotation {
        i: usize,
        j: usize,
    },
    ConstantDirection {
        epsilon: Vec<f64>,
        #[serde(default = "scale_one")]
        scale: TimeScale,
    },
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default = "scale_one")]
        scale: TimeScale,
    },
    Curl {
        epsilon: f64,
    },
    /// The saturating non-conservative remainder of an embedded Gaussian.
    NonConservative,
}

fn scale_one() -> TimeScale {
    TimeScale::One
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub n: Option<usize>,
    #[serde(default)]
    pub negate_base: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSection {
    pub times: Option<Vec<f64>>,
    pub n_mc: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdSection {
    pub n_samples: Option<usize>,
    pub slope_threshold: Option<f64>,
    pub fit_decades: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies the schedule section on top of `base` and validates the result.
    pub fn schedule_over(&self, base: ScheduleConfig) -> Result<ScheduleConfig> {
        let s = &self.schedule;
        let mut cfg = base;
        if let Some(kind) = s.kind {
            cfg.kind = kind;
        }
        if let Some(g) = s.g_base {
            cfg.g_base = g;
        }
        let beta = match s.beta_kind {
            Some(BetaKind::Constant) => Some(BetaSchedule::Constant {
                beta: s
                    .beta
                    .context("schedule.beta is required with beta_kind = \"constant\"")?,
            }),
            Some(BetaKind::Linear) => Some(BetaSchedule::Linear {
                beta_min: s
                    .beta_min
                    .context("schedule.beta_min is required with beta_kind = \"linear\"")?,
                beta_max: s
                    .beta_max
                    .context("schedule.beta_max is required with beta_kind = \"linear\"")?,
            }),
            None if s.beta.is_some() || s.beta_min.is_some() || s.beta_max.is_some() => {
                bail!("schedule.beta_kind must be set when β parameters are given")
            }
            None => None,
        };
        if let Some(b) = beta {
            cfg.beta = b;
        }
        if let Some(t) = s.t_min {
            cfg.t_min = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        self.schedule_over(ScheduleConfig::default())
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        let icfg = self.integrator.unwrap_or_default();
        icfg.validate()?;
        Ok(icfg)
    }

    /// The data distribution from either the [density] or the [manifold] table.
    pub fn density(&self) -> Result<MixtureDensity> {
        match (&self.density, &self.manifold) {
            (Some(_), Some(_)) => bail!("give either [density] or [manifold], not both"),
            (None, None) => bail!("missing [density] or [manifold] table"),
            (None, Some(m)) => Ok(m.build_density(gaugeflow::rng::derive_seed(self.seed, "centers"))?),
            (Some(DensitySection::DiagonalGaussian { mean, variances }), None) => {
                Ok(MixtureDensity::diagonal_gaussian(mean.clone(), variances.clone()).context("density")?)
            }
            (
                Some(DensitySection::Mixture {
                    weights,
                    means,
                    covariances,
                }),
                None,
            ) => {
                let means = means.iter().map(|m| DVector::from_column_slice(m)).collect();
                let covs = covariances
                    .iter()
                    .enumerate()
                    .map(|(k, c)| matrix(c).with_context(|| format!("density.covariances[{k}]")))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MixtureDensity::new(weights.clone(), means, covs).context("density")?)
            }
        }
    }

    pub fn remainder(&self, density: &MixtureDensity) -> Result<RemainderSpec> {
        let r = match &self.remainder {
            RemainderSection::Zero => RemainderSpec::Zero,
            RemainderSection::Section4 => RemainderSpec::section4(density)?,
            RemainderSection::VarianceRotation { i, j } => RemainderSpec::variance_rotation(density, *i, *j)?,
            RemainderSection::ConstantDirection { epsilon, scale } => RemainderSpec::ConstantDirection {
                r_of_t: *scale,
                epsilon: epsilon.clone(),
            },
            RemainderSection::Linear { matrix: m, scale } => RemainderSpec::LinearMatrix(MatrixOfTime::Scaled {
                matrix: matrix(m).context("remainder.matrix")?,
                scale: *scale,
            }),
            RemainderSection::Curl { epsilon } => RemainderSpec::CurlQuadratic { epsilon: *epsilon },
            RemainderSection::NonConservative => {
                let Some(m) = self
                    .manifold
                    .as_ref()
                    .filter(|m| m.kind == ManifoldKind::EmbeddedGaussian)
                else {
                    bail!("remainder.kind = \"non_conservative\" needs an embedded_gaussian [manifold]");
                };
                non_conservative_remainder(m.intrinsic_dim, m.ambient_dim)
            }
        };
        r.validate(density.dim())?;
        Ok(r)
    }

    /// Density, schedule and remainder assembled into a model field.
    pub fn field(&self, schedule: ScheduleConfig) -> Result<FieldSpec> {
        let density = self.density()?;
        let remainder = self.remainder(&density)?;
        let fs = FieldSpec::new(Arc::new(density), schedule, remainder)?;
        Ok(if self.sample.negate_base {
            fs.with_negated_base()
        } else {
            fs
        })
    }

    pub fn id_config(&self) -> Result<IdConfig> {
        let base = IdConfig::default();
        let cfg = IdConfig {
            schedule: self.schedule_over(base.schedule)?,
            integrator: self.integrator.unwrap_or(base.integrator),
            n_samples: self.id.n_samples.unwrap_or(base.n_samples),
            slope_threshold: self.id.slope_threshold.unwrap_or(base.slope_threshold),
            fit_decades: self.id.fit_decades.unwrap_or(base.fit_decades),
        };
        cfg.integrator.validate()?;
        if !(cfg.slope_threshold > 0.0 && cfg.fit_decades > 0.0) {
            bail!("id.slope_threshold and id.fit_decades must be positive");
        }
        Ok(cfg)
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        bail!("expected a non-empty square matrix");
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        Ok(toml::from_str(text)?)
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.schedule().unwrap(), ScheduleConfig::default());
        let cfg =
            parse("[schedule]\nkind = \"linear_drift\"\nbeta_kind = \"constant\"\nbeta = 2.0\nt_min = 0.01\n").unwrap();
        let s = cfg.schedule().unwrap();
        assert_eq!(s.kind, ScheduleKind::LinearDrift);
        assert_eq!(s.beta, BetaSchedule::Constant { beta: 2.0 });
        assert_eq!(s.t_min, 0.01);
        assert_eq!(cfg.id_config().unwrap().schedule.t_min, 0.01);
        assert_eq!(parse("").unwrap().id_config().unwrap(), IdConfig::default());
    }

    #[test]
    fn invalid_values_name_their_key() {
        let err = parse("[schedule]\nt_min = 2.0\n").unwrap().schedule().unwrap_err();
        assert!(format!("{err:#}").contains("schedule.t_min"), "{err:#}");
        let err = parse("[schedule]\nbeta_min = 1.0\n").unwrap().schedule().unwrap_err();
        assert!(format!("{err:#}").contains("beta_kind"));
        let err = parse("[schedule]\nbogus = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("bogus"));
        let err = parse("[density]\nkind = \"diagonal_gaussian\"\nmean = [0.0]\nvariances = [-1.0]\n")
            .unwrap()
            .density()
            .unwrap_err();
        assert!(format!("{err:#}").contains("density"), "{err:#}");
    }

    #[test]
    fn densities_and_remainders() {
        let cfg = parse(
            "[density]\nkind = \"mixture\"\nweights = [0.5, 0.5]\nmeans = [[0.0, 0.0], [1.0, 1.0]]\n\
             covariances = [[[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.5], [0.5, 1.0]]]\n\
             [remainder]\nkind = \"linear\"\nmatrix = [[0.0, 1.0], [-1.0, 0.0]]\n",
        )
        .unwrap();
        let fs = cfg.field(cfg.schedule().unwrap()).unwrap();
        assert_eq!(fs.dim(), 2);
        assert!(matches!(fs.remainder, RemainderSpec::LinearMatrix(_)));

        let cfg = parse("[manifold]\nkind = \"sphere\"\nintrinsic_dim = 1\nambient_dim = 3\nn_centers = 16\n").unwrap();
        assert_eq!(cfg.density().unwrap().n_components(), 16);
        assert!(parse("").unwrap().density().is_err());

        let cfg = parse("[density]\nkind = \"diagonal_gaussian\"\nmean = [0.0, 0.0]\nvariances = [1.0, 4.0]\n[remainder]\nkind = \"curl\"\nepsilon = 1.0\n").unwrap();
        assert!(cfg.field(cfg.schedule().unwrap()).is_err());
        let cfg = parse("[density]\nkind = \"diagonal_gaussian\"\nmean = [0.0, 0.0]\nvariances = [1.0, 4.0]\n[remainder]\nkind = \"non_conservative\"\n").unwrap();
        assert!(cfg.field(cfg.schedule().unwrap()).is_err());
    }
}
