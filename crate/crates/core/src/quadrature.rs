//! One-dimensional quadrature used by the closed-form cross-checks.

use crate::error::{Error, Result};

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("integration bounds must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    Ok(simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50))
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Cumulative integral of sampled values `ys` over the abscissae `xs`.
///
/// Each interval is integrated with the quadratic through it and its nearest
/// neighbour, which is fourth-order accurate on smooth data. With fewer than three
/// samples the trapezoid rule is used. The returned vector starts at zero.
pub fn cumulative_quadratic(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let mut out = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let piece = if n < 3 {
            0.5 * (xs[k + 1] - xs[k]) * (ys[k] + ys[k + 1])
        } else {
            // Pick a third node on the side that keeps us inside the data.
            let j = if k + 2 < n { k + 2 } else { k - 1 };
            interval_quadratic(xs[k], xs[k + 1], xs[j], ys[k], ys[k + 1], ys[j])
        };
        out[k + 1] = out[k] + piece;
    }
    out
}

/// Integral over `[x0, x1]` of the quadratic interpolating three points.
fn interval_quadratic(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    // Shift so the nodes sit at 0, h, d and integrate each Lagrange basis over [0, h].
    let h = x1 - x0;
    let d = x2 - x0;
    let h2 = h * h;
    let h3 = h2 * h;
    let w0 = (h3 / 3.0 - 0.5 * (h + d) * h2 + h2 * d) / (h * d);
    let w1 = (h3 / 3.0 - 0.5 * d * h2) / (h * (h - d));
    let w2 = (-h3 / 6.0) / (d * (d - h));
    y0 * w0 + y1 * w1 + y2 * w2
}
