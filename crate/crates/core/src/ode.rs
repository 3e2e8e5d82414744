//! Adaptive Dormand–Prince 5(4) integrator for large real state vectors.
//!
//! Complex-valued systems flatten themselves into interleaved `f64` slices.
//! The integrator lands exactly on every requested output time rather than
//! interpolating, which keeps trajectories bit-reproducible for a fixed grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors longer than this are combined in parallel.
const PAR_THRESHOLD: usize = 1 << 15;

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂ (fifth minus embedded fourth order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on accepted plus rejected steps.
    pub max_steps: usize,
    /// Upper bound on the step size.
    pub max_step: f64,
}

impl OdeOptions {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 2_000_000,
            max_step: f64::INFINITY,
        }
    }
}

/// A first-order system `dy/dt = f(t, y)`.
pub trait OdeSystem: Sync {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Runs after every accepted step. May adjust the state (soft clamping) or
    /// abort the integration; returns whether the state was modified.
    fn after_step(&self, _t: f64, _y: &mut [f64]) -> Result<bool> {
        Ok(false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn lin_comb(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    let kernel = |(i, o): (usize, &mut f64)| {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o = y[i] + h * acc;
    };
    if out.len() >= PAR_THRESHOLD {
        out.par_iter_mut().enumerate().with_min_len(4096).for_each(kernel);
    } else {
        out.iter_mut().enumerate().for_each(kernel);
    }
}

fn error_norm(y: &[f64], y_new: &[f64], k: [&[f64]; 7], h: f64, opts: &OdeOptions) -> f64 {
    let term = |i: usize| {
        let err = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        (err / scale).powi(2)
    };
    let n = y.len();
    let sum: f64 = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().with_min_len(4096).map(term).sum()
    } else {
        (0..n).map(term).sum()
    };
    (sum / n.max(1) as f64).sqrt()
}

fn rms_scaled(v: &[f64], y: &[f64], opts: &OdeOptions) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter()
        .zip(y)
        .map(|(a, b)| (a / (opts.atol + opts.rtol * b.abs())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Integrates from `times[0]` through every entry of `times` (strictly increasing),
/// calling `observe(t, y)` at each. `y` holds the initial state on entry and the
/// state at the final time on return.
pub fn integrate<S, F>(system: &S, y: &mut Vec<f64>, times: &[f64], opts: &OdeOptions, mut observe: F) -> Result<OdeStats>
where
    S: OdeSystem + ?Sized,
    F: FnMut(f64, &[f64]) -> Result<()>,
{
    let mut stats = OdeStats::default();
    if times.is_empty() {
        return Ok(stats);
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("output times must be strictly increasing".into()));
    }
    let n = y.len();
    let mut t = times[0];
    observe(t, y)?;
    if times.len() == 1 {
        return Ok(stats);
    }

    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut y_tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    system.rhs(t, y, &mut k[0]);
    stats.evaluations += 1;

    // Initial step guess (Hairer, Nørsett & Wanner, II.4).
    let mut h = {
        let d0 = rms_scaled(y, y, opts);
        let d1 = rms_scaled(&k[0], y, opts);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let span = times[times.len() - 1] - t;
        h0.min(span).min(opts.max_step)
    };

    for &t_out in &times[1..] {
        while t < t_out {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::StepSizeCollapse { time: t, step: h });
            }
            let remaining = t_out - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step < 1e-14 * t.abs().max(1.0) && !last {
                return Err(Error::StepSizeCollapse { time: t, step });
            }

            {
                let (k1, rest) = k.split_at_mut(1);
                lin_comb(&mut y_tmp, y, step, &[(A21, &k1[0])]);
                system.rhs(t + C2 * step, &y_tmp, &mut rest[0]);
            }
            {
                let (done, rest) = k.split_at_mut(2);
                lin_comb(&mut y_tmp, y, step, &[(A31, &done[0]), (A32, &done[1])]);
                system.rhs(t + C3 * step, &y_tmp, &mut rest[0]);
            }
            {
                let (done, rest) = k.split_at_mut(3);
                lin_comb(&mut y_tmp, y, step, &[(A41, &done[0]), (A42, &done[1]), (A43, &done[2])]);
                system.rhs(t + C4 * step, &y_tmp, &mut rest[0]);
            }
            {
                let (done, rest) = k.split_at_mut(4);
                lin_comb(
                    &mut y_tmp,
                    y,
                    step,
                    &[(A51, &done[0]), (A52, &done[1]), (A53, &done[2]), (A54, &done[3])],
                );
                system.rhs(t + C5 * step, &y_tmp, &mut rest[0]);
            }
            {
                let (done, rest) = k.split_at_mut(5);
                lin_comb(
                    &mut y_tmp,
                    y,
                    step,
                    &[(A61, &done[0]), (A62, &done[1]), (A63, &done[2]), (A64, &done[3]), (A65, &done[4])],
                );
                system.rhs(t + step, &y_tmp, &mut rest[0]);
            }
            {
                let (done, rest) = k.split_at_mut(6);
                lin_comb(
                    &mut y_new,
                    y,
                    step,
                    &[(B1, &done[0]), (B3, &done[2]), (B4, &done[3]), (B5, &done[4]), (B6, &done[5])],
                );
                system.rhs(t + step, &y_new, &mut rest[0]);
            }
            stats.evaluations += 6;

            let err = error_norm(y, &y_new, [&k[0], &k[1], &k[2], &k[3], &k[4], &k[5], &k[6]], step, opts);
            if !err.is_finite() {
                stats.rejected += 1;
                h = step * 0.1;
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                stats.accepted += 1;
                t = if last { t_out } else { t + step };
                std::mem::swap(y, &mut y_new);
                // FSAL: the last stage is the derivative at the new point.
                k.swap(0, 6);
                if system.after_step(t, y)? {
                    system.rhs(t, y, &mut k[0]);
                    stats.evaluations += 1;
                }
                let proposed = (step * factor).min(opts.max_step);
                // A step shortened only to land on an output time does not shrink h.
                h = if last { h.max(proposed) } else { proposed };
            } else {
                stats.rejected += 1;
                h = (step * factor.min(1.0)).min(opts.max_step);
            }
        }
        observe(t, y)?;
    }
    Ok(stats)
}
