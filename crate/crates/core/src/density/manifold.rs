//! Point clouds on simple manifolds and the kernel mixtures built from them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MixtureDensity;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    EmbeddedGaussian,
    Sphere,
    Torus,
    SwissRoll,
}

impl ManifoldKind {
    pub fn name(&self) -> &'static str {
        match self {
            ManifoldKind::EmbeddedGaussian => "embedded_gaussian",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Torus => "torus",
            ManifoldKind::SwissRoll => "swiss_roll",
        }
    }
}

/// How each sampled centre is smoothed into a mixture component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Covariance `b² I`; `b = 0` gives point masses.
    Isotropic,
    /// Covariance `b² T Tᵀ` with `T` the tangent frame at the centre.
    #[default]
    Tangent,
}

/// Multiple of the mean nearest-neighbour distance used when a tangent kernel
/// is requested with bandwidth 0.
pub const AUTO_BANDWIDTH_FACTOR: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    /// Shape parameters: `variance` (embedded Gaussian), `radius` (sphere),
    /// `major_radius`/`minor_radius` (torus), `scale`/`height` (swiss roll).
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_centers")]
    pub n_centers: usize,
    #[serde(default)]
    pub kernel_bandwidth: f64,
    #[serde(default)]
    pub kernel: KernelKind,
}

fn default_centers() -> usize {
    512
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, intrinsic_dim: usize, ambient_dim: usize) -> Self {
        ManifoldSpec {
            kind,
            intrinsic_dim,
            ambient_dim,
            params: BTreeMap::new(),
            n_centers: default_centers(),
            kernel_bandwidth: 0.0,
            kernel: KernelKind::Tangent,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_kernel(mut self, kernel: KernelKind, bandwidth: f64) -> Self {
        self.kernel = kernel;
        self.kernel_bandwidth = bandwidth;
        self
    }

    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    /// Dimension of the space the manifold naturally lives in before zero padding.
    fn natural_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::EmbeddedGaussian => self.intrinsic_dim,
            ManifoldKind::Sphere => self.intrinsic_dim + 1,
            ManifoldKind::Torus | ManifoldKind::SwissRoll => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.intrinsic_dim;
        let big_d = self.ambient_dim;
        if d == 0 {
            return Err(Error::invalid("manifold.intrinsic_dim", "must be positive"));
        }
        match self.kind {
            ManifoldKind::EmbeddedGaussian => {
                if d > big_d {
                    return Err(Error::invalid(
                        "manifold.ambient_dim",
                        "need d <= D for an embedded Gaussian",
                    ));
                }
                if !(self.param("variance", 1.0) > 0.0) {
                    return Err(Error::invalid("manifold.params.variance", "must be positive"));
                }
            }
            ManifoldKind::Sphere => {
                if d + 1 > big_d {
                    return Err(Error::invalid("manifold.ambient_dim", "a d-sphere needs D >= d + 1"));
                }
                if !(self.param("radius", 1.0) > 0.0) {
                    return Err(Error::invalid("manifold.params.radius", "must be positive"));
                }
            }
            ManifoldKind::Torus | ManifoldKind::SwissRoll => {
                if d != 2 {
                    return Err(Error::invalid(
                        "manifold.intrinsic_dim",
                        format!("{} is two-dimensional", self.kind.name()),
                    ));
                }
                if big_d < 3 {
                    return Err(Error::invalid("manifold.ambient_dim", "need D >= 3"));
                }
                let ok = if self.kind == ManifoldKind::Torus {
                    let big_r = self.param("major_radius", 2.0);
                    let r = self.param("minor_radius", 0.5);
                    r > 0.0 && big_r > r
                } else {
                    self.param("scale", 0.1) > 0.0 && self.param("height", 21.0) > 0.0
                };
                if !ok {
                    return Err(Error::invalid(
                        "manifold.params",
                        "radii and sizes must be positive (torus: major > minor)",
                    ));
                }
            }
        }
        if self.n_centers == 0 {
            return Err(Error::invalid("manifold.n_centers", "must be positive"));
        }
        if !(self.kernel_bandwidth >= 0.0 && self.kernel_bandwidth.is_finite()) {
            return Err(Error::invalid(
                "manifold.kernel_bandwidth",
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    /// The data distribution p₀: the exact Gaussian for the embedded-Gaussian kind,
    /// a kernel mixture over `n_centers` sampled points otherwise.
    pub fn build_density(&self, seed: u64) -> Result<MixtureDensity> {
        self.build_density_with_floor(seed, 0.0)
    }

    /// As [`Self::build_density`], with an automatic tangent bandwidth of at least
    /// `min_bandwidth`.
    pub fn build_density_with_floor(&self, seed: u64, min_bandwidth: f64) -> Result<MixtureDensity> {
        self.validate()?;
        if self.kind == ManifoldKind::EmbeddedGaussian {
            let var = self.param("variance", 1.0);
            let mut v = vec![0.0; self.ambient_dim];
            v[..self.intrinsic_dim].fill(var);
            return MixtureDensity::diagonal_gaussian(vec![0.0; self.ambient_dim], v);
        }
        let sample = sample_manifold_with_frames(self, self.n_centers, seed)?;
        match self.kernel {
            KernelKind::Isotropic => kernel_mixture(&sample.points, self.kernel_bandwidth),
            KernelKind::Tangent => {
                let b = if self.kernel_bandwidth > 0.0 {
                    self.kernel_bandwidth
                } else {
                    (AUTO_BANDWIDTH_FACTOR * mean_nearest_neighbour(&sample.points)).max(min_bandwidth)
                };
                tangent_kernel_mixture(&sample, b)
            }
        }
    }
}

/// Points together with an orthonormal tangent frame (D×d) at each point.
#[derive(Clone, Debug)]
pub struct ManifoldSample {
    pub points: Vec<Vec<f64>>,
    pub frames: Vec<DMatrix<f64>>,
}

impl ManifoldSample {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.points.len();
        let d = self.points.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, d, |i, j| self.points[i][j])
    }
}

/// `n` points on the manifold as an n×D matrix, reproducible from `seed`.
pub fn sample_manifold(spec: &ManifoldSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(sample_manifold_with_frames(spec, n, seed)?.to_matrix())
}

pub fn sample_manifold_with_frames(spec: &ManifoldSpec, n: usize, seed: u64) -> Result<ManifoldSample> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one point"));
    }
    spec.validate()?;
    let big_d = spec.ambient_dim;
    let nat = spec.natural_dim();
    let d = spec.intrinsic_dim;
    let mut points = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let (p, t) = match spec.kind {
            ManifoldKind::EmbeddedGaussian => {
                let s = spec.param("variance", 1.0).sqrt();
                let p: Vec<f64> = (0..d).map(|_| s * normal(&mut rng)).collect();
                (p, DMatrix::identity(d, d))
            }
            ManifoldKind::Sphere => sphere_point(spec.param("radius", 1.0), d, &mut rng),
            ManifoldKind::Torus => torus_point(
                spec.param("major_radius", 2.0),
                spec.param("minor_radius", 0.5),
                &mut rng,
            ),
            ManifoldKind::SwissRoll => swiss_roll_point(spec.param("scale", 0.1), spec.param("height", 21.0), &mut rng),
        };
        let mut x = vec![0.0; big_d];
        x[..nat].copy_from_slice(&p);
        let mut frame = DMatrix::zeros(big_d, d);
        frame.view_mut((0, 0), (nat, d)).copy_from(&t);
        points.push(x);
        frames.push(frame);
    }
    Ok(ManifoldSample { points, frames })
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sphere_point<R: Rng + ?Sized>(radius: f64, d: usize, rng: &mut R) -> (Vec<f64>, DMatrix<f64>) {
    let m = d + 1;
    let mut v = DVector::from_fn(m, |_, _| normal(rng));
    while v.norm() < 1e-8 {
        v = DVector::from_fn(m, |_, _| normal(rng));
    }
    let unit = v.normalize();
    // The Householder reflection sending e₀ to ±unit maps e₁..e_d onto an
    // orthonormal basis of the tangent space at unit.
    let mut e0 = DVector::zeros(m);
    e0[0] = 1.0;
    let w = if unit[0] > 0.0 { &unit - &e0 } else { &unit + &e0 };
    let h = if w.norm() < 1e-300 {
        DMatrix::identity(m, m)
    } else {
        let w = w.normalize();
        DMatrix::identity(m, m) - (&w * w.transpose()) * 2.0
    };
    let frame = h.columns(1, d).into_owned();
    let p: Vec<f64> = unit.iter().map(|x| radius * x).collect();
    (p, frame)
}

fn torus_point<R: Rng + ?Sized>(big_r: f64, r: f64, rng: &mut R) -> (Vec<f64>, DMatrix<f64>) {
    let theta = 2.0 * PI * rng.random::<f64>();
    // Area element is proportional to (R + r cos φ); sample φ by rejection.
    let phi = loop {
        let phi = 2.0 * PI * rng.random::<f64>();
        if rng.random::<f64>() * (big_r + r) <= big_r + r * phi.cos() {
            break phi;
        }
    };
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let ring = big_r + r * cp;
    let p = vec![ring * ct, ring * st, r * sp];
    let frame = DMatrix::from_column_slice(3, 2, &[-st, ct, 0.0, -sp * ct, -sp * st, cp]);
    (p, frame)
}

fn swiss_roll_point<R: Rng + ?Sized>(scale: f64, height: f64, rng: &mut R) -> (Vec<f64>, DMatrix<f64>) {
    let s = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
    let h = height * rng.random::<f64>();
    let (ss, cs) = s.sin_cos();
    let p = vec![scale * s * cs, scale * h, scale * s * ss];
    let ds = DVector::from_vec(vec![cs - s * ss, 0.0, ss + s * cs]).normalize();
    let frame = DMatrix::from_column_slice(3, 2, &[ds[0], ds[1], ds[2], 0.0, 1.0, 0.0]);
    (p, frame)
}

/// Equal-weight mixture with covariance `bandwidth² I` around each point.
pub fn kernel_mixture(points: &[Vec<f64>], bandwidth: f64) -> Result<MixtureDensity> {
    if points.is_empty() {
        return Err(Error::invalid("points", "kernel mixture needs at least one point"));
    }
    if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid("bandwidth", "must be finite and nonnegative"));
    }
    let dim = points[0].len();
    MixtureDensity::axis_mixture(points, &vec![bandwidth * bandwidth; dim])
}

/// Equal-weight mixture of flat Gaussian discs `N(p, b² T Tᵀ)` tangent to the manifold.
pub fn tangent_kernel_mixture(sample: &ManifoldSample, bandwidth: f64) -> Result<MixtureDensity> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid("bandwidth", "tangent kernels need a positive bandwidth"));
    }
    MixtureDensity::frame_mixture(&sample.points, &sample.frames, bandwidth * bandwidth)
}

/// Mean distance from each point to its nearest neighbour.
pub fn mean_nearest_neighbour(points: &[Vec<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, q) in points.iter().enumerate() {
            if i != j {
                let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d2);
            }
        }
        total += best.sqrt();
    }
    total / points.len() as f64
}
