//! Explicit Runge–Kutta integrators over an increasing independent variable.
//!
//! Both methods stop exactly on every requested output point; the adaptive
//! method keeps its proposed step size across an output so that dense output
//! grids do not throttle step-size control.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Smallest step the adaptive method may take before reporting stiffness.
pub const MIN_STEP: f64 = 1e-12;
const MAX_STEPS: usize = 50_000_000;

pub(crate) struct Rk4Buffers {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    pub fn new(n: usize) -> Self {
        Rk4Buffers {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// Classic fourth-order Runge–Kutta with `n_steps` equal steps over
/// `[outputs[0], outputs.last()]`, shortened where needed to land on outputs.
///
/// `time_of` maps the integration variable to the physical time reported in
/// errors. `on_output(k, y)` is called at every output point, including the first.
pub fn rk4<F, O>(
    mut rhs: F,
    y: &mut [f64],
    outputs: &[f64],
    n_steps: usize,
    time_of: impl Fn(f64) -> f64,
    mut on_output: O,
) -> Result<SolverStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(usize, &[f64]),
{
    let n = y.len();
    let mut b = Rk4Buffers::new(n);
    let mut stats = SolverStats::default();
    on_output(0, y);
    let s0 = outputs[0];
    let span = outputs[outputs.len() - 1] - s0;
    let tiny = 1e-12 * span.abs().max(1e-300);
    // Equal steps, split wherever an output falls strictly inside one.
    let mut nodes: Vec<(f64, Option<usize>)> = (1..n_steps)
        .map(|i| (s0 + span * i as f64 / n_steps as f64, None))
        .filter(|(v, _)| outputs.iter().all(|o| (o - v).abs() > tiny))
        .collect();
    nodes.extend(outputs.iter().enumerate().skip(1).map(|(k, &o)| (o, Some(k))));
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = s0;
    for (next, out) in nodes {
        let h = next - s;
        if h > 0.0 {
            rk4_step(&mut rhs, s, h, y, &mut b)?;
            stats.accepted += 1;
            stats.evaluations += 4;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t: time_of(next) });
            }
            s = next;
        }
        if let Some(k) = out {
            on_output(k, y);
        }
    }
    Ok(stats)
}

fn rk4_step<F>(rhs: &mut F, s: f64, h: f64, y: &mut [f64], b: &mut Rk4Buffers) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let [k1, k2, k3, k4] = &mut b.k;
    let tmp = &mut b.tmp;
    rhs(s, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    rhs(s + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    rhs(s + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    rhs(s + h, tmp, k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub(crate) struct DopriBuffers {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl DopriBuffers {
    pub fn new(n: usize) -> Self {
        DopriBuffers {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

/// Adaptive Dormand–Prince 5(4) with the usual mixed absolute/relative RMS error
/// norm.
pub fn dopri5<F, O>(
    mut rhs: F,
    y: &mut [f64],
    outputs: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    time_of: impl Fn(f64) -> f64,
    mut on_output: O,
) -> Result<SolverStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(usize, &[f64]),
{
    let n = y.len();
    let mut b = DopriBuffers::new(n);
    let mut stats = SolverStats::default();
    on_output(0, y);
    let mut s = outputs[0];
    let s_end = outputs[outputs.len() - 1];
    if s_end <= s {
        return Ok(stats);
    }

    rhs(s, y, &mut b.k[0])?;
    stats.evaluations += 1;
    let mut h = initial_step(&mut rhs, s, y, &mut b, rel_tol, abs_tol, s_end - s, &mut stats)?;
    let mut fresh_k1 = true;
    let mut last_rejected = false;

    for (k, &target) in outputs.iter().enumerate().skip(1) {
        while s < target {
            if stats.accepted + stats.rejected > MAX_STEPS {
                return Err(Error::Stiffness { t: time_of(s) });
            }
            if !fresh_k1 {
                rhs(s, y, &mut b.k[0])?;
                stats.evaluations += 1;
                fresh_k1 = true;
            }
            let remaining = target - s;
            let clipped = h >= remaining;
            let h_try = if clipped { remaining } else { h };
            let err = dopri_step(&mut rhs, s, h_try, y, &mut b, rel_tol, abs_tol)?;
            stats.evaluations += 6;
            if !err.is_finite() || b.y_new.iter().any(|v| !v.is_finite()) {
                stats.rejected += 1;
                h = 0.1 * h_try;
                last_rejected = true;
                if h < MIN_STEP {
                    return Err(Error::Divergence { t: time_of(s) });
                }
                continue;
            }
            if err <= 1.0 {
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                let grow = if last_rejected { grow.min(1.0) } else { grow };
                let s_next = if clipped { target } else { s + h_try };
                y.copy_from_slice(&b.y_new);
                // FSAL: the seventh stage is f at the new point.
                b.k.swap(0, 6);
                s = s_next;
                stats.accepted += 1;
                last_rejected = false;
                // A clipped step says nothing about the sustainable step size.
                if !clipped || h_try * grow < h {
                    h = h_try * grow;
                }
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                if h < MIN_STEP {
                    return Err(Error::Stiffness { t: time_of(s) });
                }
            }
        }
        on_output(k, y);
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    s: f64,
    y: &[f64],
    b: &mut DopriBuffers,
    rel_tol: f64,
    abs_tol: f64,
    span: f64,
    stats: &mut SolverStats,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len() as f64;
    let sc = |v: f64| abs_tol + rel_tol * v.abs();
    let d0 = (y.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (y.iter().zip(&b.k[0]).map(|(v, f)| (f / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    for (t, (v, f)) in b.tmp.iter_mut().zip(y.iter().zip(&b.k[0])) {
        *t = v + h0 * f;
    }
    rhs(s + h0, &b.tmp, &mut b.k[1])?;
    stats.evaluations += 1;
    let d2 = (y
        .iter()
        .zip(b.k[1].iter().zip(&b.k[0]))
        .map(|(v, (f1, f0))| ((f1 - f0) / sc(*v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(span);
    Ok(if h.is_finite() && h > 0.0 { h } else { 1e-6f64.min(span) })
}

#[allow(clippy::too_many_arguments)]
fn dopri_step<F>(
    rhs: &mut F,
    s: f64,
    h: f64,
    y: &[f64],
    b: &mut DopriBuffers,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let DopriBuffers { k, tmp, y_new } = b;
    let (k1, rest) = k.split_first_mut().unwrap();
    let [k2, k3, k4, k5, k6, k7] = rest else { unreachable!() };

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    rhs(s + C2 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    rhs(s + C3 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    rhs(s + C4 * h, tmp, k4)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    rhs(s + C5 * h, tmp, k5)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    rhs(s + h, tmp, k6)?;
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    rhs(s + h, y_new, k7)?;
    let mut acc = 0.0;
    for i in 0..n {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
        acc += (e / sc).powi(2);
    }
    Ok((acc / n as f64).sqrt())
}
