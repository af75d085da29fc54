//! Benchmark fixtures.

use std::sync::Arc;

use gaugeflow::{FieldSpec, ManifoldKind, ManifoldSpec, MixtureDensity, RemainderSpec, ScheduleConfig};
use nalgebra::{DMatrix, DVector};

/// A `k`-component Gaussian mixture in `dim` dimensions with full covariances.
pub fn mixture(dim: usize, k: usize) -> Arc<MixtureDensity> {
    let weights = vec![1.0 / k as f64; k];
    let means = (0..k)
        .map(|c| DVector::from_fn(dim, |i, _| ((c * dim + i) as f64 * 0.7).sin() * 2.0))
        .collect();
    let covariances = (0..k)
        .map(|c| {
            let l = DMatrix::from_fn(dim, dim, |i, j| ((c + 1) * (i + 2 * j + 1)) as f64 * 0.13 % 0.5);
            &l * l.transpose() + DMatrix::identity(dim, dim) * 0.2
        })
        .collect();
    Arc::new(MixtureDensity::new(weights, means, covariances).expect("valid mixture"))
}

/// True-score field of [`mixture`] under the default schedule.
pub fn mixture_field(dim: usize, k: usize) -> FieldSpec {
    FieldSpec::true_score(mixture(dim, k), ScheduleConfig::default())
}

/// Diagonal Gaussian with the variance-rotation remainder.
pub fn rotation_field(dim: usize) -> FieldSpec {
    let var: Vec<f64> = (0..dim).map(|i| 0.5 + i as f64).collect();
    let p = Arc::new(MixtureDensity::diagonal_gaussian(vec![0.0; dim], var).expect("valid Gaussian"));
    let r = RemainderSpec::section4(&p).expect("diagonal Gaussian");
    FieldSpec::new(p, ScheduleConfig::default(), r).expect("matching dimensions")
}

/// Tangent-kernel sphere mixture as used by the intrinsic-dimension suite.
pub fn sphere_spec(intrinsic_dim: usize, n_centers: usize) -> ManifoldSpec {
    let mut spec = ManifoldSpec::new(ManifoldKind::Sphere, intrinsic_dim, intrinsic_dim + 1);
    spec.n_centers = n_centers;
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(mixture_field(4, 3).dim(), 4);
        assert_eq!(rotation_field(3).dim(), 3);
        assert!(sphere_spec(2, 16).build_density(1).is_ok());
    }
}
