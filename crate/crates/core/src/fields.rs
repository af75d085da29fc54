//! Vector fields: true scores, remainder families, composed model fields
//! `s_θ = ∇log p + r`, and the probability-flow field `f̃ = f - ½ g² s_θ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{Diffusion, MixtureDensity, Scratch};
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;

/// Scalar time profiles used by the remainder families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    One,
    Zero,
    /// 1 / v(t), the inverse variance of the transition kernel.
    InverseMarginalVariance,
    /// 1 / g²(t).
    InverseDiffusionSq,
}

impl TimeScale {
    pub fn value(&self, cfg: &ScheduleConfig, t: f64) -> f64 {
        match self {
            TimeScale::One => 1.0,
            TimeScale::Zero => 0.0,
            TimeScale::InverseMarginalVariance => 1.0 / cfg.marginal_variance(t),
            TimeScale::InverseDiffusionSq => 1.0 / cfg.diffusion_sq(t),
        }
    }
}

pub type MatrixCallback = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// A time-dependent matrix R_t.
#[derive(Clone)]
pub enum MatrixOfTime {
    Constant(DMatrix<f64>),
    Scaled {
        matrix: DMatrix<f64>,
        scale: TimeScale,
    },
    /// Two nonzero entries, `(i, j) = -var_i(t)` and `(j, i) = var_j(t)`, where
    /// `var_k(t) = α(t)² var0_k + v(t)` are the variances of a diagonal Gaussian
    /// carried along by the forward SDE.
    VarianceRotation {
        dim: usize,
        i: usize,
        j: usize,
        var0_i: f64,
        var0_j: f64,
    },
    Callback {
        dim: usize,
        f: MatrixCallback,
    },
}

impl fmt::Debug for MatrixOfTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixOfTime::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            MatrixOfTime::Scaled { matrix, scale } => f
                .debug_struct("Scaled")
                .field("matrix", matrix)
                .field("scale", scale)
                .finish(),
            MatrixOfTime::VarianceRotation {
                dim,
                i,
                j,
                var0_i,
                var0_j,
            } => f
                .debug_struct("VarianceRotation")
                .field("dim", dim)
                .field("i", i)
                .field("j", j)
                .field("var0_i", var0_i)
                .field("var0_j", var0_j)
                .finish(),
            MatrixOfTime::Callback { dim, .. } => f.debug_struct("Callback").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

impl MatrixOfTime {
    pub fn dim(&self) -> usize {
        match self {
            MatrixOfTime::Constant(m) | MatrixOfTime::Scaled { matrix: m, .. } => m.nrows(),
            MatrixOfTime::VarianceRotation { dim, .. } | MatrixOfTime::Callback { dim, .. } => *dim,
        }
    }

    pub fn at(&self, cfg: &ScheduleConfig, t: f64) -> DMatrix<f64> {
        match self {
            MatrixOfTime::Constant(m) => m.clone(),
            MatrixOfTime::Scaled { matrix, scale } => matrix * scale.value(cfg, t),
            MatrixOfTime::VarianceRotation { dim, i, j, .. } => {
                let (vi, vj) = self.rotation_variances(cfg, t);
                let mut m = DMatrix::zeros(*dim, *dim);
                m[(*i, *j)] = -vi;
                m[(*j, *i)] = vj;
                m
            }
            MatrixOfTime::Callback { f, .. } => f(t),
        }
    }

    fn rotation_variances(&self, cfg: &ScheduleConfig, t: f64) -> (f64, f64) {
        match self {
            MatrixOfTime::VarianceRotation { var0_i, var0_j, .. } => {
                let d = Diffusion::at(cfg, t);
                let a2 = d.a * d.a;
                (a2 * var0_i + d.v, a2 * var0_j + d.v)
            }
            _ => unreachable!("only defined for the rotation family"),
        }
    }

    /// out += R_t x.
    fn apply_add(&self, cfg: &ScheduleConfig, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            MatrixOfTime::Constant(m) => mat_vec_add(m, 1.0, x, out),
            MatrixOfTime::Scaled { matrix, scale } => mat_vec_add(matrix, scale.value(cfg, t), x, out),
            MatrixOfTime::VarianceRotation { i, j, .. } => {
                let (vi, vj) = self.rotation_variances(cfg, t);
                out[*i] -= vi * x[*j];
                out[*j] += vj * x[*i];
            }
            MatrixOfTime::Callback { f, .. } => mat_vec_add(&f(t), 1.0, x, out),
        }
    }

    /// Row-major out += R_t.
    fn add_to(&self, cfg: &ScheduleConfig, t: f64, out: &mut [f64]) {
        let n = self.dim();
        match self {
            MatrixOfTime::VarianceRotation { i, j, .. } => {
                let (vi, vj) = self.rotation_variances(cfg, t);
                out[i * n + j] -= vi;
                out[j * n + i] += vj;
            }
            MatrixOfTime::Constant(m) => add_matrix(m, 1.0, out),
            MatrixOfTime::Scaled { matrix, scale } => add_matrix(matrix, scale.value(cfg, t), out),
            MatrixOfTime::Callback { f, .. } => add_matrix(&f(t), 1.0, out),
        }
    }

    fn trace(&self, cfg: &ScheduleConfig, t: f64) -> f64 {
        match self {
            MatrixOfTime::VarianceRotation { .. } => 0.0,
            MatrixOfTime::Constant(m) => m.trace(),
            MatrixOfTime::Scaled { matrix, scale } => matrix.trace() * scale.value(cfg, t),
            MatrixOfTime::Callback { f, .. } => f(t).trace(),
        }
    }
}

fn mat_vec_add(m: &DMatrix<f64>, s: f64, x: &[f64], out: &mut [f64]) {
    for i in 0..m.nrows() {
        let mut acc = 0.0;
        for j in 0..m.ncols() {
            acc += m[(i, j)] * x[j];
        }
        out[i] += s * acc;
    }
}

fn add_matrix(m: &DMatrix<f64>, s: f64, out: &mut [f64]) {
    let n = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..n {
            out[i * n + j] += s * m[(i, j)];
        }
    }
}

/// The remainder r(x, t) added to the true score.
#[derive(Clone, Debug)]
pub enum RemainderSpec {
    Zero,
    /// r(x, t) = r(t) ε.
    ConstantDirection {
        r_of_t: TimeScale,
        epsilon: Vec<f64>,
    },
    /// r(x, t) = R_t x.
    LinearMatrix(MatrixOfTime),
    /// r(x, t) = (0, …, 0, ε x₀), a curl of a quadratic potential (D ≥ 3).
    CurlQuadratic {
        epsilon: f64,
    },
    /// Pointwise sum of remainders.
    Sum(Vec<RemainderSpec>),
}

impl RemainderSpec {
    /// The rotation remainder of a diagonal Gaussian in coordinates (0, 1):
    /// R_t = [[0, -σ₁²(t)], [σ₂²(t), 0]] with σ_k²(t) the variances of p_t.
    pub fn section4(density: &MixtureDensity) -> Result<Self> {
        Self::variance_rotation(density, 0, 1)
    }

    pub fn variance_rotation(density: &MixtureDensity, i: usize, j: usize) -> Result<Self> {
        let (mean, var) = density.as_diagonal_gaussian().ok_or_else(|| {
            Error::invalid(
                "remainder.matrix",
                "the rotation family needs a single diagonal Gaussian",
            )
        })?;
        // R_t x preserves p_t only when the Gaussian is centred.
        if mean.iter().any(|m| *m != 0.0) {
            return Err(Error::invalid(
                "remainder.matrix",
                "the rotation family needs a zero-mean Gaussian",
            ));
        }
        let dim = density.dim();
        if i == j || i >= dim || j >= dim {
            return Err(Error::invalid(
                "remainder.matrix",
                "rotation indices must be distinct and in range",
            ));
        }
        Ok(RemainderSpec::LinearMatrix(MatrixOfTime::VarianceRotation {
            dim,
            i,
            j,
            var0_i: var[i],
            var0_j: var[j],
        }))
    }

    pub fn linear(m: DMatrix<f64>) -> Self {
        RemainderSpec::LinearMatrix(MatrixOfTime::Constant(m))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            RemainderSpec::Zero => Ok(()),
            RemainderSpec::ConstantDirection { epsilon, .. } => {
                if epsilon.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: epsilon.len(),
                    });
                }
                if epsilon.iter().any(|e| !e.is_finite()) {
                    return Err(Error::invalid("remainder.epsilon", "must be finite"));
                }
                Ok(())
            }
            RemainderSpec::LinearMatrix(m) => {
                if let MatrixOfTime::Constant(a) | MatrixOfTime::Scaled { matrix: a, .. } = m {
                    if a.nrows() != a.ncols() {
                        return Err(Error::invalid("remainder.matrix", "must be square"));
                    }
                    if a.iter().any(|e| !e.is_finite()) {
                        return Err(Error::invalid("remainder.matrix", "must be finite"));
                    }
                }
                if m.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: m.dim(),
                    });
                }
                Ok(())
            }
            RemainderSpec::CurlQuadratic { epsilon } => {
                if dim < 3 {
                    return Err(Error::invalid("remainder.kind", "the curl remainder needs D >= 3"));
                }
                if !epsilon.is_finite() {
                    return Err(Error::invalid("remainder.epsilon", "must be finite"));
                }
                Ok(())
            }
            RemainderSpec::Sum(parts) => parts.iter().try_for_each(|p| p.validate(dim)),
        }
    }

    /// out += r(x, t).
    pub fn add_value(&self, cfg: &ScheduleConfig, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            RemainderSpec::Zero => {}
            RemainderSpec::ConstantDirection { r_of_t, epsilon } => {
                let s = r_of_t.value(cfg, t);
                for (o, e) in out.iter_mut().zip(epsilon) {
                    *o += s * e;
                }
            }
            RemainderSpec::LinearMatrix(m) => m.apply_add(cfg, x, t, out),
            RemainderSpec::CurlQuadratic { epsilon } => {
                let last = out.len() - 1;
                out[last] += epsilon * x[0];
            }
            RemainderSpec::Sum(parts) => parts.iter().for_each(|p| p.add_value(cfg, x, t, out)),
        }
    }

    /// Row-major out += ∇r(x, t).
    pub fn add_jacobian(&self, cfg: &ScheduleConfig, x: &[f64], t: f64, out: &mut [f64]) {
        let n = x.len();
        match self {
            RemainderSpec::Zero | RemainderSpec::ConstantDirection { .. } => {}
            RemainderSpec::LinearMatrix(m) => m.add_to(cfg, t, out),
            RemainderSpec::CurlQuadratic { epsilon } => out[(n - 1) * n] += epsilon,
            RemainderSpec::Sum(parts) => parts.iter().for_each(|p| p.add_jacobian(cfg, x, t, out)),
        }
    }

    /// ∇·r(x, t), computed analytically.
    pub fn divergence(&self, cfg: &ScheduleConfig, x: &[f64], t: f64) -> f64 {
        match self {
            RemainderSpec::Zero | RemainderSpec::ConstantDirection { .. } => 0.0,
            RemainderSpec::LinearMatrix(m) => m.trace(cfg, t),
            // The only nonzero Jacobian entry is off the diagonal (D ≥ 3).
            RemainderSpec::CurlQuadratic { .. } => 0.0,
            RemainderSpec::Sum(parts) => parts.iter().map(|p| p.divergence(cfg, x, t)).sum(),
        }
    }

    pub fn value(&self, cfg: &ScheduleConfig, x: &[f64], t: f64) -> DVector<f64> {
        let mut out = vec![0.0; x.len()];
        self.add_value(cfg, x, t, &mut out);
        DVector::from_vec(out)
    }

    pub fn jacobian(&self, cfg: &ScheduleConfig, x: &[f64], t: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut out = vec![0.0; n * n];
        self.add_jacobian(cfg, x, t, &mut out);
        DMatrix::from_row_slice(n, n, &out)
    }
}

/// A model field `s_θ(x, t) = ∇log p_t(x) + r(x, t)`.
///
/// With `negate_base` the remainder is taken to include `-∇log p_t`, so the base
/// score cancels and `s_θ = r`; with a zero remainder the probability flow then
/// reduces to the drift alone.
#[derive(Clone, Debug)]
pub struct FieldSpec {
    pub density: Arc<MixtureDensity>,
    pub schedule: ScheduleConfig,
    pub remainder: RemainderSpec,
    pub negate_base: bool,
}

impl FieldSpec {
    pub fn new(density: Arc<MixtureDensity>, schedule: ScheduleConfig, remainder: RemainderSpec) -> Result<Self> {
        remainder.validate(density.dim())?;
        Ok(FieldSpec {
            density,
            schedule,
            remainder,
            negate_base: false,
        })
    }

    pub fn true_score(density: Arc<MixtureDensity>, schedule: ScheduleConfig) -> Self {
        FieldSpec {
            density,
            schedule,
            remainder: RemainderSpec::Zero,
            negate_base: false,
        }
    }

    pub fn with_negated_base(mut self) -> Self {
        self.negate_base = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// The diffused density p_t.
    pub fn density_at(&self, t: f64) -> Result<MixtureDensity> {
        self.density.diffuse(&self.schedule, t)
    }

    /// Writes s_θ(x, t) into `out` and, when requested, its row-major Jacobian.
    pub fn eval_into(
        &self,
        x: &[f64],
        t: f64,
        out: &mut [f64],
        jac: Option<&mut [f64]>,
        ws: &mut Scratch,
    ) -> Result<()> {
        self.check(x, t)?;
        let n = self.dim();
        match jac {
            Some(j) => {
                if self.negate_base {
                    out.fill(0.0);
                    j.fill(0.0);
                } else {
                    self.density
                        .eval_at(x, Diffusion::at(&self.schedule, t), Some(out), Some(&mut *j), ws)?;
                }
                debug_assert_eq!(j.len(), n * n);
                self.remainder.add_jacobian(&self.schedule, x, t, j);
            }
            None => {
                if self.negate_base {
                    out.fill(0.0);
                } else {
                    self.density
                        .eval_at(x, Diffusion::at(&self.schedule, t), Some(out), None, ws)?;
                }
            }
        }
        self.remainder.add_value(&self.schedule, x, t, out);
        Ok(())
    }

    pub fn eval_field(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t, &mut out, None, &mut Scratch::new())?;
        Ok(DVector::from_vec(out))
    }

    pub fn eval_field_jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        self.eval_into(x, t, &mut out, Some(&mut jac), &mut Scratch::new())?;
        Ok(DMatrix::from_row_slice(n, n, &jac))
    }

    /// f̃_θ(x, t) = f(x, t) - ½ g²(t) s_θ(x, t).
    pub fn backward_field(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        let mut out = vec![0.0; self.dim()];
        ProbabilityFlow(self).rhs(x, t, &mut out, &mut Scratch::new())?;
        Ok(DVector::from_vec(out))
    }

    /// The probability-flow field of this model as ODE dynamics.
    pub fn flow(&self) -> ProbabilityFlow<'_> {
        ProbabilityFlow(self)
    }
}

/// Time-dependent dynamics with an analytic Jacobian, as consumed by the ODE solver.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, x: &[f64], t: f64, out: &mut [f64], ws: &mut Scratch) -> Result<()>;

    /// Writes the value and the row-major Jacobian.
    fn rhs_jacobian(&self, x: &[f64], t: f64, out: &mut [f64], jac: &mut [f64], ws: &mut Scratch) -> Result<()>;
}

/// f̃_θ of a [`FieldSpec`].
#[derive(Clone, Copy, Debug)]
pub struct ProbabilityFlow<'a>(pub &'a FieldSpec);

impl VectorField for ProbabilityFlow<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn rhs(&self, x: &[f64], t: f64, out: &mut [f64], ws: &mut Scratch) -> Result<()> {
        let fs = self.0;
        fs.eval_into(x, t, out, None, ws)?;
        let c = fs.schedule.drift_coefficient(t);
        let half_g2 = 0.5 * fs.schedule.diffusion_sq(t);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi - half_g2 * *o;
        }
        Ok(())
    }

    fn rhs_jacobian(&self, x: &[f64], t: f64, out: &mut [f64], jac: &mut [f64], ws: &mut Scratch) -> Result<()> {
        let fs = self.0;
        let n = fs.dim();
        fs.eval_into(x, t, out, Some(jac), ws)?;
        let c = fs.schedule.drift_coefficient(t);
        let half_g2 = 0.5 * fs.schedule.diffusion_sq(t);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi - half_g2 * *o;
        }
        for v in jac.iter_mut() {
            *v *= -half_g2;
        }
        for i in 0..n {
            jac[i * n + i] += c;
        }
        Ok(())
    }
}

/// dx/dt = M(t) x.
pub struct LinearField<F: Fn(f64) -> DMatrix<f64> + Sync> {
    pub dim: usize,
    pub matrix: F,
}

impl<F: Fn(f64) -> DMatrix<f64> + Sync> VectorField for LinearField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, x: &[f64], t: f64, out: &mut [f64], _ws: &mut Scratch) -> Result<()> {
        out.fill(0.0);
        mat_vec_add(&(self.matrix)(t), 1.0, x, out);
        Ok(())
    }

    fn rhs_jacobian(&self, x: &[f64], t: f64, out: &mut [f64], jac: &mut [f64], _ws: &mut Scratch) -> Result<()> {
        let m = (self.matrix)(t);
        out.fill(0.0);
        mat_vec_add(&m, 1.0, x, out);
        jac.fill(0.0);
        add_matrix(&m, 1.0, jac);
        Ok(())
    }
}

/// s_θ(x, t).
pub fn eval_field(fs: &FieldSpec, x: &[f64], t: f64) -> Result<DVector<f64>> {
    fs.eval_field(x, t)
}

/// ∇s_θ(x, t).
pub fn eval_field_jacobian(fs: &FieldSpec, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    fs.eval_field_jacobian(x, t)
}

/// f̃_θ(x, t) under the field's own schedule.
pub fn backward_field(fs: &FieldSpec, x: &[f64], t: f64) -> Result<DVector<f64>> {
    fs.backward_field(x, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConservativityReport {
    pub max_asymmetry: f64,
    pub is_conservative: bool,
}

/// Largest relative antisymmetric part of ∇s_θ over the given points.
pub fn conservativity_check(fs: &FieldSpec, xs: &[DVector<f64>], t: f64, tol: f64) -> Result<ConservativityReport> {
    if xs.is_empty() {
        return Err(Error::invalid("xs", "need at least one point"));
    }
    let mut max_asymmetry = 0.0f64;
    for x in xs {
        let j = fs.eval_field_jacobian(x.as_slice(), t)?;
        let a = (&j - j.transpose()).norm() / j.norm().max(1.0);
        max_asymmetry = max_asymmetry.max(a);
    }
    Ok(ConservativityReport {
        max_asymmetry,
        is_conservative: max_asymmetry <= tol,
    })
}
