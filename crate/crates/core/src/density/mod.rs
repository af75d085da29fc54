//! Gaussian mixtures whose forward diffusion stays in closed form.
//!
//! Each component is stored either axis-aligned (a diagonal covariance) or as a
//! low-rank frame `U diag(λ) Uᵀ + iso·I` with orthonormal columns in `U`. The
//! forward SDE maps means to `α m` and covariances to `α² C + v I`, which
//! preserves both forms, so p_t can be evaluated at any time without building a
//! new object.

mod manifold;

pub use manifold::{
    kernel_mixture, sample_manifold, sample_manifold_with_frames, tangent_kernel_mixture, KernelKind, ManifoldKind,
    ManifoldSample, ManifoldSpec,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::schedule::ScheduleConfig;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Responsibilities below this are dropped from score and Hessian sums.
const RESPONSIBILITY_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    /// Diagonal covariance.
    Axis(Vec<f64>),
    /// `U diag(lambda) Uᵀ + iso I`; `u` is D×r with orthonormal columns.
    Frame {
        u: DMatrix<f64>,
        lambda: Vec<f64>,
        iso: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Component {
    mean: Vec<f64>,
    shape: Shape,
}

/// A finite Gaussian mixture in R^D.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDensity {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Component>,
}

/// Reusable buffers for mixture evaluation.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    logc: Vec<f64>,
    grads: Vec<f64>,
    diff: Vec<f64>,
    proj: Vec<f64>,
    pub(crate) vec_a: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Time at which a mixture is evaluated: means scale by `a`, covariances map to
/// `a² C + v I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diffusion {
    pub a: f64,
    pub v: f64,
}

impl Diffusion {
    pub const IDENTITY: Diffusion = Diffusion { a: 1.0, v: 0.0 };

    pub fn at(cfg: &ScheduleConfig, t: f64) -> Self {
        Diffusion {
            a: cfg.mean_scale(t),
            v: cfg.marginal_variance(t),
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

impl MixtureDensity {
    /// Builds a mixture from weights, means and full covariance matrices.
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture", "needs at least one component"));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::invalid(
                "mixture",
                "weights, means and covariances must have the same length",
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture", "dimension must be positive"));
        }
        let mut components = Vec::with_capacity(weights.len());
        for (m, c) in means.iter().zip(&covariances) {
            check_dim(dim, m.len())?;
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.nrows().max(c.ncols()),
                });
            }
            components.push(Component {
                mean: m.iter().copied().collect(),
                shape: shape_from_covariance(c)?,
            });
        }
        Self::from_parts(dim, weights, components)
    }

    /// A single Gaussian.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    /// A single Gaussian with diagonal covariance.
    pub fn diagonal_gaussian(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "mixture.covariance",
                "variances must be finite and nonnegative",
            ));
        }
        let dim = mean.len();
        Self::from_parts(
            dim,
            vec![1.0],
            vec![Component {
                mean,
                shape: Shape::Axis(variances),
            }],
        )
    }

    /// Equal-weight mixture of axis-aligned components sharing one variance vector.
    pub(crate) fn axis_mixture(centers: &[Vec<f64>], variances: &[f64]) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("mixture", "needs at least one component"));
        }
        let dim = variances.len();
        let w = 1.0 / centers.len() as f64;
        let mut components = Vec::with_capacity(centers.len());
        for c in centers {
            check_dim(dim, c.len())?;
            components.push(Component {
                mean: c.clone(),
                shape: Shape::Axis(variances.to_vec()),
            });
        }
        Self::from_parts(dim, vec![w; centers.len()], components)
    }

    /// Equal-weight mixture of low-rank components `b² U Uᵀ` centred at `centers`.
    pub(crate) fn frame_mixture(centers: &[Vec<f64>], frames: &[DMatrix<f64>], variance: f64) -> Result<Self> {
        if centers.is_empty() || centers.len() != frames.len() {
            return Err(Error::invalid("mixture", "need one frame per centre"));
        }
        let dim = centers[0].len();
        let w = 1.0 / centers.len() as f64;
        let mut components = Vec::with_capacity(centers.len());
        for (c, u) in centers.iter().zip(frames) {
            check_dim(dim, c.len())?;
            check_dim(dim, u.nrows())?;
            components.push(Component {
                mean: c.clone(),
                shape: Shape::Frame {
                    u: u.clone(),
                    lambda: vec![variance; u.ncols()],
                    iso: 0.0,
                },
            });
        }
        Self::from_parts(dim, vec![w; centers.len()], components)
    }

    fn from_parts(dim: usize, weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture.weights", "weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "mixture.weights",
                format!("weights must sum to 1 within 1e-12, got {total}"),
            ));
        }
        if components.iter().any(|c| c.mean.iter().any(|m| !m.is_finite())) {
            return Err(Error::invalid("mixture.means", "means must be finite"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(MixtureDensity {
            dim,
            weights,
            log_weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.components[k].mean)
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        match &self.components[k].shape {
            Shape::Axis(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Shape::Frame { u, lambda, iso } => {
                let l = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
                u * l * u.transpose() + DMatrix::identity(self.dim, self.dim) * *iso
            }
        }
    }

    /// Diagonal variances of a single axis-aligned Gaussian, if that is what this is.
    pub fn as_diagonal_gaussian(&self) -> Option<(&[f64], &[f64])> {
        match self.components.as_slice() {
            [Component {
                mean,
                shape: Shape::Axis(v),
            }] => Some((mean, v)),
            _ => None,
        }
    }

    /// Overall mean and covariance of the mixture after diffusion `d`.
    pub fn moments(&self, d: Diffusion) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim;
        let mut mean = DVector::zeros(n);
        for (w, c) in self.weights.iter().zip(&self.components) {
            for i in 0..n {
                mean[i] += w * d.a * c.mean[i];
            }
        }
        let mut cov = DMatrix::zeros(n, n);
        for (k, (w, c)) in self.weights.iter().zip(&self.components).enumerate() {
            let m = DVector::from_iterator(n, c.mean.iter().map(|x| d.a * x)) - &mean;
            cov += (self.covariance(k) * (d.a * d.a) + m.clone() * m.transpose()) * *w;
        }
        for i in 0..n {
            cov[(i, i)] += d.v;
        }
        (mean, cov)
    }

    /// p_t as its own mixture object.
    pub fn diffuse(&self, cfg: &ScheduleConfig, t: f64) -> Result<MixtureDensity> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        Ok(self.diffuse_by(Diffusion::at(cfg, t)))
    }

    /// Applies an arbitrary Gaussian transition `x ↦ a x + N(0, v I)`.
    pub fn diffuse_by(&self, d: Diffusion) -> MixtureDensity {
        let a2 = d.a * d.a;
        let components = self
            .components
            .iter()
            .map(|c| Component {
                mean: c.mean.iter().map(|m| d.a * m).collect(),
                shape: match &c.shape {
                    Shape::Axis(v) => Shape::Axis(v.iter().map(|x| a2 * x + d.v).collect()),
                    Shape::Frame { u, lambda, iso } => Shape::Frame {
                        u: u.clone(),
                        lambda: lambda.iter().map(|l| a2 * l).collect(),
                        iso: a2 * iso + d.v,
                    },
                },
            })
            .collect();
        MixtureDensity {
            dim: self.dim,
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            components,
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_at(x, Diffusion::IDENTITY, &mut Scratch::new())
    }

    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_at(x, Diffusion::IDENTITY, Some(&mut out), None, &mut Scratch::new())?;
        Ok(DVector::from_vec(out))
    }

    /// Hessian of the log-density.
    pub fn score_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let mut s = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        self.eval_at(x, Diffusion::IDENTITY, Some(&mut s), Some(&mut h), &mut Scratch::new())?;
        Ok(DMatrix::from_row_slice(n, n, &h))
    }

    pub fn log_density_at(&self, x: &[f64], d: Diffusion, ws: &mut Scratch) -> Result<f64> {
        self.eval_at(x, d, None, None, ws)
    }

    /// Evaluates log p, and optionally the score and the row-major Hessian, of the
    /// mixture after diffusion `d`. Returns log p.
    pub fn eval_at(
        &self,
        x: &[f64],
        d: Diffusion,
        score: Option<&mut [f64]>,
        hessian: Option<&mut [f64]>,
        ws: &mut Scratch,
    ) -> Result<f64> {
        let n = self.dim;
        check_dim(n, x.len())?;
        let k_total = self.components.len();
        let want_grad = score.is_some() || hessian.is_some();
        ws.logc.clear();
        ws.logc.resize(k_total, 0.0);
        if want_grad {
            ws.grads.clear();
            ws.grads.resize(k_total * n, 0.0);
        }
        ws.diff.resize(n, 0.0);
        let a2 = d.a * d.a;

        for (k, c) in self.components.iter().enumerate() {
            for i in 0..n {
                ws.diff[i] = x[i] - d.a * c.mean[i];
            }
            let (quad, logdet) = match &c.shape {
                Shape::Axis(var) => {
                    let mut quad = 0.0;
                    let mut logdet = 0.0;
                    for i in 0..n {
                        let s2 = a2 * var[i] + d.v;
                        if !(s2 > 0.0) {
                            return Err(Error::SingularDensity);
                        }
                        let z = ws.diff[i] / s2;
                        quad += ws.diff[i] * z;
                        logdet += s2.ln();
                        if want_grad {
                            ws.grads[k * n + i] = -z;
                        }
                    }
                    (quad, logdet)
                }
                Shape::Frame { u, lambda, iso } => {
                    let r = lambda.len();
                    let iso_t = a2 * iso + d.v;
                    let full = r == n;
                    if !full && !(iso_t > 0.0) {
                        return Err(Error::SingularDensity);
                    }
                    ws.proj.resize(r, 0.0);
                    let mut quad = 0.0;
                    let mut logdet = 0.0;
                    let mut proj_sq = 0.0;
                    for j in 0..r {
                        let col = u.column(j);
                        let mut y = 0.0;
                        for i in 0..n {
                            y += col[i] * ws.diff[i];
                        }
                        let s2 = a2 * lambda[j] + iso_t;
                        if !(s2 > 0.0) {
                            return Err(Error::SingularDensity);
                        }
                        quad += y * y / s2;
                        logdet += s2.ln();
                        proj_sq += y * y;
                        // Store the coefficient of u_j in -P d.
                        ws.proj[j] = if full { -y / s2 } else { y / iso_t - y / s2 };
                    }
                    if !full {
                        let d2: f64 = ws.diff.iter().map(|v| v * v).sum();
                        quad += (d2 - proj_sq).max(0.0) / iso_t;
                        logdet += (n - r) as f64 * iso_t.ln();
                    }
                    if want_grad {
                        let g = &mut ws.grads[k * n..(k + 1) * n];
                        for i in 0..n {
                            g[i] = if full { 0.0 } else { -ws.diff[i] / iso_t };
                        }
                        for j in 0..r {
                            let cj = ws.proj[j];
                            let col = u.column(j);
                            for i in 0..n {
                                g[i] += cj * col[i];
                            }
                        }
                    }
                    (quad, logdet)
                }
            };
            ws.logc[k] = self.log_weights[k] - 0.5 * (quad + logdet + n as f64 * LN_2PI);
        }

        let max = ws.logc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Domain("log-density is not finite at this point".into()));
        }
        let mut total = 0.0;
        for l in ws.logc.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        let log_p = max + total.ln();
        if !want_grad {
            return Ok(log_p);
        }
        // logc now holds responsibilities.
        for l in ws.logc.iter_mut() {
            *l /= total;
        }

        let mut s_buf = std::mem::take(&mut ws.vec_a);
        s_buf.clear();
        s_buf.resize(n, 0.0);
        for k in 0..k_total {
            let g = ws.logc[k];
            if g < RESPONSIBILITY_FLOOR {
                continue;
            }
            for i in 0..n {
                s_buf[i] += g * ws.grads[k * n + i];
            }
        }

        if let Some(h) = hessian {
            check_dim(n * n, h.len())?;
            h.iter_mut().for_each(|v| *v = 0.0);
            let mut diag_shift = 0.0;
            for (k, c) in self.components.iter().enumerate() {
                let gk = ws.logc[k];
                if gk < RESPONSIBILITY_FLOOR {
                    continue;
                }
                let grad = &ws.grads[k * n..(k + 1) * n];
                for i in 0..n {
                    let gi = gk * grad[i];
                    for j in i..n {
                        h[i * n + j] += gi * grad[j];
                    }
                }
                match &c.shape {
                    Shape::Axis(var) => {
                        for i in 0..n {
                            h[i * n + i] -= gk / (a2 * var[i] + d.v);
                        }
                    }
                    Shape::Frame { u, lambda, iso } => {
                        let iso_t = a2 * iso + d.v;
                        let full = lambda.len() == n;
                        if !full {
                            diag_shift += gk / iso_t;
                        }
                        for (j, l) in lambda.iter().enumerate() {
                            let s2 = a2 * l + iso_t;
                            let w = if full { -gk / s2 } else { gk * (1.0 / iso_t - 1.0 / s2) };
                            let col = u.column(j);
                            for i in 0..n {
                                let ci = w * col[i];
                                for jj in i..n {
                                    h[i * n + jj] += ci * col[jj];
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                h[i * n + i] -= diag_shift;
                for j in i..n {
                    h[i * n + j] -= s_buf[i] * s_buf[j];
                }
            }
            for i in 0..n {
                for j in 0..i {
                    h[i * n + j] = h[j * n + i];
                }
            }
        }
        if let Some(s) = score {
            check_dim(n, s.len())?;
            s.copy_from_slice(&s_buf);
        }
        ws.vec_a = s_buf;
        Ok(log_p)
    }

    /// Draws one point from the mixture after diffusion `d`.
    pub fn sample_one<R: Rng + ?Sized>(&self, d: Diffusion, rng: &mut R) -> DVector<f64> {
        let k = if self.components.len() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights)
                .expect("weights validated at construction")
                .sample(rng)
        };
        self.sample_component(k, d, rng)
    }

    fn sample_component<R: Rng + ?Sized>(&self, k: usize, d: Diffusion, rng: &mut R) -> DVector<f64> {
        let n = self.dim;
        let c = &self.components[k];
        let a2 = d.a * d.a;
        let mut x = DVector::from_iterator(n, c.mean.iter().map(|m| d.a * m));
        match &c.shape {
            Shape::Axis(var) => {
                for i in 0..n {
                    let z: f64 = StandardNormal.sample(rng);
                    x[i] += (a2 * var[i] + d.v).sqrt() * z;
                }
            }
            Shape::Frame { u, lambda, iso } => {
                for (j, l) in lambda.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    x.axpy((a2 * l).sqrt() * z, &u.column(j), 1.0);
                }
                let s = (a2 * iso + d.v).sqrt();
                for i in 0..n {
                    let z: f64 = StandardNormal.sample(rng);
                    x[i] += s * z;
                }
            }
        }
        x
    }

    /// `n` draws after diffusion `d`; draw `i` uses stream `i` of `seed`.
    pub fn sample(&self, d: Diffusion, n: usize, seed: u64) -> Vec<DVector<f64>> {
        (0..n)
            .map(|i| self.sample_one(d, &mut stream_rng(seed, i as u64)))
            .collect()
    }
}

fn shape_from_covariance(c: &DMatrix<f64>) -> Result<Shape> {
    let n = c.nrows();
    let scale = c.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::invalid("mixture.covariance", "covariance must be symmetric"));
            }
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture.covariance", "covariance must be finite"));
    }
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || c[(i, j)] == 0.0));
    if is_diagonal {
        let v: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
        if v.iter().any(|x| *x < -1e-10) {
            return Err(Error::invalid(
                "mixture.covariance",
                "covariance must be positive semidefinite",
            ));
        }
        return Ok(Shape::Axis(v.into_iter().map(|x| x.max(0.0)).collect()));
    }
    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.iter().any(|l| *l < -1e-10) {
        return Err(Error::invalid(
            "mixture.covariance",
            "covariance must be positive semidefinite",
        ));
    }
    let cutoff = 1e-14 * scale;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    let mut u = DMatrix::zeros(n, keep.len());
    let mut lambda = Vec::with_capacity(keep.len());
    for (j, &i) in keep.iter().enumerate() {
        u.set_column(j, &eig.eigenvectors.column(i));
        lambda.push(eig.eigenvalues[i]);
    }
    Ok(Shape::Frame { u, lambda, iso: 0.0 })
}
