//! The gauge freedom condition `∇·r + rᵀ∇log p = 0`, L²(p) geometry, the
//! orthogonal decomposition of linear fields, trace invariance of
//! divergence-free remainders, and Lie brackets of (time-dependent) fields.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{Diffusion, MixtureDensity};
use crate::error::{Error, Result};
use crate::fields::{FieldSpec, RemainderSpec, VectorField};
use crate::rng::{derive_seed, stream_rng};
use crate::schedule::ScheduleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaugeReport {
    pub t: f64,
    pub residual_max: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

/// ∇·r(x, t) + r(x, t)ᵀ ∇log p_t(x) with the divergence taken analytically.
pub fn gauge_residual(
    remainder: &RemainderSpec,
    schedule: &ScheduleConfig,
    p_t: &MixtureDensity,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    let s = p_t.score(x)?;
    let r = remainder.value(schedule, x, t);
    Ok(remainder.divergence(schedule, x, t) + r.dot(&s))
}

/// Residual statistics over `n_mc` exact draws from p_t at every t in `ts`.
pub fn gauge_check(
    remainder: &RemainderSpec,
    p0: &MixtureDensity,
    schedule: &ScheduleConfig,
    ts: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<GaugeReport>> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be positive"));
    }
    remainder.validate(p0.dim())?;
    ts.iter()
        .enumerate()
        .map(|(k, &t)| {
            let p_t = p0.diffuse(schedule, t)?;
            let stream_seed = derive_seed(seed, &format!("gauge-{k}"));
            let residuals = (0..n_mc)
                .into_par_iter()
                .map(|i| {
                    let x = p0.sample_one(Diffusion::at(schedule, t), &mut stream_rng(stream_seed, i as u64));
                    gauge_residual(remainder, schedule, &p_t, x.as_slice(), t)
                })
                .collect::<Result<Vec<f64>>>()?;
            let residual_max = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            let residual_rms = (residuals.iter().map(|r| r * r).sum::<f64>() / n_mc as f64).sqrt();
            Ok(GaugeReport {
                t,
                residual_max,
                residual_rms,
                n_points: n_mc,
            })
        })
        .collect()
}

/// Monte Carlo estimate of ⟨u, v⟩ in L²(p_t): mean and standard error.
pub fn l2p_inner<U, V>(u: U, v: V, p_t: &MixtureDensity, n_mc: usize, seed: u64) -> Result<(f64, f64)>
where
    U: Fn(&[f64]) -> DVector<f64> + Sync,
    V: Fn(&[f64]) -> DVector<f64> + Sync,
{
    if n_mc < 2 {
        return Err(Error::invalid("n_mc", "need at least 2 points for a standard error"));
    }
    let values: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let x = p_t.sample_one(Diffusion::IDENTITY, &mut stream_rng(seed, i as u64));
            u(x.as_slice()).dot(&v(x.as_slice()))
        })
        .collect();
    Ok(mean_and_se(&values))
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A linear field `A x` split into a conservative part `S x` and a gauge part `R x`
/// under a Gaussian with precision Λ.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecomposition {
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Largest violation of the defining constraints.
    pub residual: f64,
}

fn check_spd(lambda: &DMatrix<f64>) -> Result<()> {
    let n = lambda.nrows();
    if lambda.ncols() != n {
        return Err(Error::invalid("precision", "must be square"));
    }
    if (lambda - lambda.transpose()).amax() > 1e-12 * lambda.amax().max(1.0) {
        return Err(Error::invalid("precision", "must be symmetric"));
    }
    if lambda.clone().cholesky().is_none() {
        return Err(Error::invalid("precision", "must be positive definite"));
    }
    Ok(())
}

/// Largest violation of S + R = A, S = Sᵀ, tr R = 0 and RᵀΛ + ΛR = 0.
pub fn decomposition_residual(a: &DMatrix<f64>, lambda: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let recompose = (s + r - a).amax();
    let sym = (s - s.transpose()).amax();
    let trace = r.trace().abs();
    let gauge = (r.transpose() * lambda + lambda * r).amax();
    recompose.max(sym).max(trace).max(gauge)
}

/// Solves the linear constraint system for (S, R) in the least-squares sense.
///
/// Unknowns are the upper triangle of S and all entries of R; equations are
/// S + R = A, the upper triangle of ΛR + RᵀΛ = 0, and tr R = 0. The SVD solution
/// has minimal norm if the system is rank deficient.
pub fn decompose_linear(a: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<LinearDecomposition> {
    let n = a.nrows();
    if a.ncols() != n || lambda.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.ncols().max(lambda.nrows()),
        });
    }
    check_spd(lambda)?;
    let n_sym = n * (n + 1) / 2;
    let n_unknowns = n_sym + n * n;
    let n_eq = n * n + n_sym + 1;
    let sym_index = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let r_index = |i: usize, j: usize| n_sym + i * n + j;

    let mut m = DMatrix::zeros(n_eq, n_unknowns);
    let mut rhs = DVector::zeros(n_eq);
    let mut row = 0;
    for i in 0..n {
        for j in 0..n {
            m[(row, sym_index(i, j))] = 1.0;
            m[(row, r_index(i, j))] = 1.0;
            rhs[row] = a[(i, j)];
            row += 1;
        }
    }
    // (ΛR + RᵀΛ)_ij = Σ_k Λ_ik R_kj + R_ki Λ_kj.
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                m[(row, r_index(k, j))] += lambda[(i, k)];
                m[(row, r_index(k, i))] += lambda[(k, j)];
            }
            row += 1;
        }
    }
    for i in 0..n {
        m[(row, r_index(i, i))] = 1.0;
    }
    let svd = m.svd(true, true);
    let tol = 1e-13 * svd.singular_values.max();
    let sol = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::invalid("decomposition", e.to_string()))?;

    let s = DMatrix::from_fn(n, n, |i, j| sol[sym_index(i, j)]);
    let r = DMatrix::from_fn(n, n, |i, j| sol[r_index(i, j)]);
    let residual = decomposition_residual(a, lambda, &s, &r);
    if residual > 1e-6 * a.amax().max(1.0) {
        return Err(Error::Infeasible { residual });
    }
    Ok(LinearDecomposition { s, r, residual })
}

/// The same decomposition by a second route: with R = A - S the gauge
/// constraint becomes the Lyapunov equation ΛS + SΛ = ΛA + AᵀΛ, solved in the
/// eigenbasis of Λ.
pub fn decompose_linear_lyapunov(a: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<LinearDecomposition> {
    check_spd(lambda)?;
    let eig = SymmetricEigen::new(lambda.clone());
    let q = &eig.eigenvectors;
    let rhs = lambda * a + a.transpose() * lambda;
    let b = q.transpose() * rhs * q;
    let n = a.nrows();
    let st = DMatrix::from_fn(n, n, |i, j| b[(i, j)] / (eig.eigenvalues[i] + eig.eigenvalues[j]));
    let s = q * st * q.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let r = a - &s;
    let residual = decomposition_residual(a, lambda, &s, &r);
    Ok(LinearDecomposition { s, r, residual })
}

/// max over xs of |tr ∇s_θ - tr ∇²log p_t|.
pub fn trace_invariance_check(fs: &FieldSpec, t: f64, xs: &[DVector<f64>]) -> Result<f64> {
    let p_t = fs.density_at(t)?;
    let mut worst = 0.0f64;
    for x in xs {
        let model = fs.eval_field_jacobian(x.as_slice(), t)?.trace();
        let truth = p_t.score_jacobian(x.as_slice())?.trace();
        worst = worst.max((model - truth).abs());
    }
    Ok(worst)
}

/// Matrix of the bracket [Bx, Cx] = (CB - BC) x.
pub fn lie_bracket_linear(b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    c * b - b * c
}

/// A time-dependent field with an analytic spatial Jacobian.
pub trait TimeField: Sync {
    fn value(&self, x: &[f64], t: f64) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>>;
}

/// x ↦ M(t) x.
pub struct LinearTimeField<F: Fn(f64) -> DMatrix<f64> + Sync>(pub F);

impl<F: Fn(f64) -> DMatrix<f64> + Sync> TimeField for LinearTimeField<F> {
    fn value(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        Ok((self.0)(t) * DVector::from_column_slice(x))
    }

    fn jacobian(&self, _x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        Ok((self.0)(t))
    }
}

/// The generating field in reversed time, u(x, τ) = -f̃(x, 1 - τ).
pub struct ReversedFlow<'a>(pub &'a FieldSpec);

impl TimeField for ReversedFlow<'_> {
    fn value(&self, x: &[f64], tau: f64) -> Result<DVector<f64>> {
        Ok(-self.0.backward_field(x, 1.0 - tau)?)
    }

    fn jacobian(&self, x: &[f64], tau: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut out = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        self.0
            .flow()
            .rhs_jacobian(x, 1.0 - tau, &mut out, &mut jac, &mut Default::default())?;
        Ok(-DMatrix::from_row_slice(n, n, &jac))
    }
}

/// [u, v](x, t) = ∇v u - ∇u v.
pub fn lie_bracket<U: TimeField + ?Sized, V: TimeField + ?Sized>(
    u: &U,
    v: &V,
    x: &[f64],
    t: f64,
) -> Result<DVector<f64>> {
    Ok(v.jacobian(x, t)? * u.value(x, t)? - u.jacobian(x, t)? * v.value(x, t)?)
}

/// [u, v] - ∂_t(βu - αv) with β = 1 - α; zero exactly when the lifted fields
/// (u, α) and (v, β) commute.
///
/// The time derivative uses central differences; within one step of the ends of
/// [0, 1] it falls back to a one-sided second-order stencil.
pub fn lifted_commutation_residual<U: TimeField + ?Sized, V: TimeField + ?Sized>(
    u: &U,
    v: &V,
    alpha: f64,
    x: &[f64],
    t: f64,
) -> Result<DVector<f64>> {
    let beta = 1.0 - alpha;
    let w = |s: f64| -> Result<DVector<f64>> { Ok(u.value(x, s)? * beta - v.value(x, s)? * alpha) };
    let h = f64::EPSILON.cbrt() * t.abs().max(1.0);
    let dt = if t - h >= 0.0 && t + h <= 1.0 {
        (w(t + h)? - w(t - h)?) / (2.0 * h)
    } else if t + 2.0 * h <= 1.0 {
        (w(t)? * -3.0 + w(t + h)? * 4.0 - w(t + 2.0 * h)?) / (2.0 * h)
    } else {
        (w(t)? * 3.0 - w(t - h)? * 4.0 + w(t - 2.0 * h)?) / (2.0 * h)
    };
    Ok(lie_bracket(u, v, x, t)? - dt)
}

/// v = (βu + A x) / α with β = 1 - α: the partner of `u` whose lifted fields
/// commute exactly when the linear part A x commutes with `u`.
pub struct AffineLift<'a, U: TimeField + ?Sized> {
    pub u: &'a U,
    pub a: DMatrix<f64>,
    pub alpha: f64,
}

impl<U: TimeField + ?Sized> TimeField for AffineLift<'_, U> {
    fn value(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        let beta = 1.0 - self.alpha;
        Ok((self.u.value(x, t)? * beta + &self.a * DVector::from_column_slice(x)) / self.alpha)
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let beta = 1.0 - self.alpha;
        Ok((self.u.jacobian(x, t)? * beta + &self.a) / self.alpha)
    }
}
