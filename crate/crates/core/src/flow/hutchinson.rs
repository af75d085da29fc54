//! Skilling–Hutchinson stochastic trace estimation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDist {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// `n` probe vectors of length `dim`, row after row.
pub fn draw_probes(dim: usize, n: usize, dist: ProbeDist, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..dim * n).map(|_| draw(dist, &mut rng)).collect()
}

fn draw<R: Rng + ?Sized>(dist: ProbeDist, rng: &mut R) -> f64 {
    match dist {
        ProbeDist::Gaussian => StandardNormal.sample(rng),
        ProbeDist::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// εᵀ J ε for a row-major J, summed over symmetric pairs so that an exactly
/// antisymmetric J gives exactly zero.
pub fn quadratic_form(j: &[f64], eps: &[f64]) -> f64 {
    let n = eps.len();
    let mut acc = 0.0;
    for a in 0..n {
        acc += eps[a] * eps[a] * j[a * n + a];
        for b in (a + 1)..n {
            acc += eps[a] * eps[b] * (j[a * n + b] + j[b * n + a]);
        }
    }
    acc
}

/// Mean of the quadratic form over the probes in `probes`.
pub(crate) fn mean_quadratic_form(j: &[f64], probes: &[f64], dim: usize) -> f64 {
    let n = probes.len() / dim;
    probes.chunks_exact(dim).map(|e| quadratic_form(j, e)).sum::<f64>() / n as f64
}

fn summarize(values: impl Iterator<Item = f64>, n: usize) -> TraceEstimate {
    // Welford for a stable variance.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, v) in values.enumerate() {
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    let std_error = if n > 1 {
        (m2 / (n - 1) as f64 / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    TraceEstimate {
        estimate: mean,
        std_error,
    }
}

/// Trace estimate of an explicit matrix.
pub fn hutchinson_trace(j: &DMatrix<f64>, n_probes: usize, dist: ProbeDist, seed: u64) -> Result<TraceEstimate> {
    let n = j.nrows();
    if j.ncols() != n {
        return Err(Error::invalid("J", "must be square"));
    }
    if n_probes == 0 {
        return Err(Error::invalid("n_probes", "must be positive"));
    }
    let row_major: Vec<f64> = j.transpose().iter().copied().collect();
    let mut rng = stream_rng(seed, 0);
    let mut eps = vec![0.0; n];
    let values = (0..n_probes).map(|_| {
        eps.iter_mut().for_each(|e| *e = draw(dist, &mut rng));
        quadratic_form(&row_major, &eps)
    });
    Ok(summarize(values, n_probes))
}

/// Trace estimate from a matrix–vector product `action(v, out)` (out = J v).
pub fn hutchinson_trace_action<F>(
    dim: usize,
    action: F,
    n_probes: usize,
    dist: ProbeDist,
    seed: u64,
) -> Result<TraceEstimate>
where
    F: Fn(&[f64], &mut [f64]),
{
    if n_probes == 0 {
        return Err(Error::invalid("n_probes", "must be positive"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut eps = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    let values = (0..n_probes).map(|_| {
        eps.iter_mut().for_each(|e| *e = draw(dist, &mut rng));
        action(&eps, &mut out);
        eps.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>()
    });
    Ok(summarize(values, n_probes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_trace() {
        let e = hutchinson_trace(&DMatrix::identity(4, 4), 2000, ProbeDist::Gaussian, 1).unwrap();
        assert!((e.estimate - 4.0).abs() < 3.0 * e.std_error);
        let r = hutchinson_trace(&DMatrix::identity(4, 4), 10, ProbeDist::Rademacher, 1).unwrap();
        assert_eq!(r.estimate, 4.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn antisymmetric_matrices_vanish_probe_by_probe() {
        let a = DMatrix::from_fn(5, 5, |i, j| (i as f64 - 2.0 * j as f64).sin());
        let k = &a - a.transpose();
        let e = hutchinson_trace(&k, 100, ProbeDist::Rademacher, 9).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn matrix_and_action_forms_agree() {
        let j = DMatrix::from_fn(3, 3, |i, k| 0.3 * i as f64 - 0.7 * k as f64 + 1.0);
        let a = hutchinson_trace(&j, 500, ProbeDist::Gaussian, 5).unwrap();
        let b = hutchinson_trace_action(
            3,
            |v, out| {
                let r = &j * nalgebra::DVector::from_column_slice(v);
                out.copy_from_slice(r.as_slice());
            },
            500,
            ProbeDist::Gaussian,
            5,
        )
        .unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-12);
    }

    #[test]
    fn zero_probes_rejected() {
        assert!(hutchinson_trace(&DMatrix::identity(2, 2), 0, ProbeDist::Gaussian, 0).is_err());
    }
}
