//! Sums of stretched exponentials `Σ A_i exp(−(t/B_i)^{C_i})`.
//!
//! Fits use variable projection: the amplitudes enter linearly and are solved by
//! non-negative least squares for every trial `(B, C)`, so the nonlinear search
//! only covers the timescales and exponents.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use super::DecayTrace;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::stats::percentile;

pub const EXPONENT_MIN: f64 = 0.1;
pub const EXPONENT_MAX: f64 = 5.0;
const STARTS: usize = 16;
const START_SEED: u64 = 0x1a7e_4c0b;
/// One-sigma percentiles of a normal distribution.
const LOWER_PCT: f64 = 15.865_525_393_145_7;
const UPPER_PCT: f64 = 84.134_474_606_854_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchedTerm {
    pub amplitude: f64,
    pub timescale: f64,
    pub exponent: f64,
}

impl StretchedTerm {
    fn value(&self, t: f64) -> f64 {
        self.amplitude * (-(t / self.timescale).powf(self.exponent)).exp()
    }

    fn derivative(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let x = t / self.timescale;
        if t == 0.0 {
            return match self.exponent {
                c if c > 1.0 => 0.0,
                1.0 => -self.amplitude / self.timescale,
                _ => f64::NEG_INFINITY,
            };
        }
        -self.amplitude * self.exponent / self.timescale * x.powf(self.exponent - 1.0) * (-x.powf(self.exponent)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpModel {
    pub terms: Vec<StretchedTerm>,
}

impl StretchedExpModel {
    pub fn single(amplitude: f64, timescale: f64, exponent: f64) -> Self {
        Self {
            terms: vec![StretchedTerm {
                amplitude,
                timescale,
                exponent,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.terms.len()) {
            return Err(Error::InvalidParameter(format!("{} terms, expected 1 to 3", self.terms.len())));
        }
        for t in &self.terms {
            if !(t.amplitude >= 0.0) || !(t.timescale > 0.0) || !(t.exponent > 0.0) {
                return Err(Error::InvalidParameter(format!("invalid term {t:?}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.value(t)).sum()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.derivative(t)).sum()
    }

    /// `−f'(t)/f(t)` from the analytic derivative.
    pub fn normalized_rate(&self, t: f64) -> Result<f64> {
        let f = self.eval(t);
        if !(f > 0.0) {
            return Err(Error::NonPositiveModel { time: t });
        }
        Ok(-self.derivative(t) / f)
    }
}

/// `γ(t) = −d/dt ln f(t)` of a fitted model on the trace's time points.
pub fn normalized_rate_from_fit(trace: &DecayTrace, model: &StretchedExpModel) -> Result<Vec<f64>> {
    model.validate()?;
    trace.times.iter().map(|&t| model.normalized_rate(t)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConstraints {
    /// Weight of the penalty on `f'(0) + N(0)/τ0`, in units where `N(0) = τ0 = 1`.
    pub derivative_penalty: Option<f64>,
    /// Fit only `t ≤ window`.
    pub window: Option<f64>,
    /// Independent lifetime used by the penalty.
    pub tau0: f64,
}

impl Default for FitConstraints {
    fn default() -> Self {
        Self {
            derivative_penalty: None,
            window: None,
            tau0: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub resamples: usize,
    pub failed: usize,
    pub times: Vec<f64>,
    pub curve_lower: Vec<f64>,
    pub curve_upper: Vec<f64>,
    pub rate_lower: Vec<f64>,
    pub rate_upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: StretchedExpModel,
    pub times: Vec<f64>,
    /// Data minus model on `times`.
    pub residuals: Vec<f64>,
    pub residual_rms: f64,
    pub window_end: f64,
    pub starts_converged: usize,
    pub bootstrap: Option<Bootstrap>,
}

impl FitReport {
    /// Plain-text report: parameters, residual RMS and window.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# stretched-exponential fit v1\n");
        out.push_str(&format!("window = [0, {}]\n", self.window_end));
        out.push_str(&format!("points = {}\n", self.times.len()));
        out.push_str(&format!("residual_rms = {:.6e}\n", self.residual_rms));
        out.push_str(&format!("starts_converged = {}\n", self.starts_converged));
        for (i, t) in self.model.terms.iter().enumerate() {
            out.push_str(&format!(
                "term {i}: A = {:.8e}, B = {:.8e}, C = {:.8e}\n",
                t.amplitude, t.timescale, t.exponent
            ));
        }
        if let Some(b) = &self.bootstrap {
            out.push_str(&format!("bootstrap = {} resamples ({} failed)\n", b.resamples, b.failed));
            out.push_str("t,f_lower,f_upper,gamma_lower,gamma_upper\n");
            for k in 0..b.times.len() {
                out.push_str(&format!(
                    "{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                    b.times[k], b.curve_lower[k], b.curve_upper[k], b.rate_lower[k], b.rate_upper[k]
                ));
            }
        }
        out
    }
}

/// Data prepared for the projected least-squares problem, scaled so that the
/// largest population is one.
struct Problem<'a> {
    times: &'a [f64],
    ys: Vec<f64>,
    scale: f64,
    n_terms: usize,
    penalty: Option<(f64, f64, f64)>, // (weight, delta, target slope)
}

fn exponent_of(u: f64) -> f64 {
    EXPONENT_MIN + (EXPONENT_MAX - EXPONENT_MIN) / (1.0 + (-u).exp())
}

fn exponent_inverse(c: f64) -> f64 {
    let s = ((c - EXPONENT_MIN) / (EXPONENT_MAX - EXPONENT_MIN)).clamp(1e-9, 1.0 - 1e-9);
    (s / (1.0 - s)).ln()
}

impl Problem<'_> {
    fn rows(&self) -> usize {
        self.times.len() + usize::from(self.penalty.is_some())
    }

    fn design(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.rows();
        let mut a = DMatrix::zeros(m, self.n_terms);
        let mut b = DVector::zeros(m);
        for k in 0..self.n_terms {
            let bk = p[2 * k].exp();
            let ck = exponent_of(p[2 * k + 1]);
            for (i, &t) in self.times.iter().enumerate() {
                a[(i, k)] = (-(t / bk).powf(ck)).exp();
            }
            if let Some((w, delta, _)) = self.penalty {
                a[(m - 1, k)] = w * ((-(delta / bk).powf(ck)).exp() - 1.0) / delta;
            }
        }
        for (i, y) in self.ys.iter().enumerate() {
            b[i] = *y;
        }
        if let Some((w, _, target)) = self.penalty {
            b[m - 1] = w * target;
        }
        (a, b)
    }

    /// Non-negative amplitudes minimizing `‖A x − b‖` by enumerating active sets.
    fn amplitudes(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
        let k = a.ncols();
        if a.iter().any(|v| !v.is_finite()) {
            return vec![0.0; k];
        }
        let mut best = (b.norm_squared(), vec![0.0; k]);
        for mask in 1u32..(1 << k) {
            let cols: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
            let sub = DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])]);
            let Ok(x) = sub.clone().svd(true, true).solve(b, 1e-13) else {
                continue;
            };
            if x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                continue;
            }
            let r = (&sub * &x - b).norm_squared();
            if r < best.0 {
                let mut full = vec![0.0; k];
                for (j, &c) in cols.iter().enumerate() {
                    full[c] = x[j];
                }
                best = (r, full);
            }
        }
        best.1
    }

    fn residual(&self, p: &[f64], out: &mut [f64]) {
        let (a, b) = self.design(p);
        if a.iter().any(|v| !v.is_finite()) {
            out.fill(f64::INFINITY);
            return;
        }
        let x = self.amplitudes(&a, &b);
        let r = a * DVector::from_vec(x) - b;
        out.copy_from_slice(r.as_slice());
    }

    fn model(&self, p: &[f64]) -> StretchedExpModel {
        let (a, b) = self.design(p);
        let x = self.amplitudes(&a, &b);
        let mut terms: Vec<StretchedTerm> = (0..self.n_terms)
            .map(|k| StretchedTerm {
                amplitude: x[k] * self.scale,
                timescale: p[2 * k].exp(),
                exponent: exponent_of(p[2 * k + 1]),
            })
            .collect();
        terms.sort_by(|a, b| a.timescale.total_cmp(&b.timescale));
        StretchedExpModel { terms }
    }

    fn solve(&self, start: &[f64]) -> (Vec<f64>, f64, bool) {
        let opts = LmOptions {
            max_iterations: 300,
            ..LmOptions::default()
        };
        let out = levenberg_marquardt(|p, r| self.residual(p, r), self.rows(), start, &opts);
        (out.params, out.cost, out.converged)
    }
}

fn prepare<'a>(times: &'a [f64], ys: &[f64], n_terms: usize, constraints: &FitConstraints) -> Result<Problem<'a>> {
    let scale = ys.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::FitFailed("trace has no positive population in the window".into()));
    }
    let penalty = constraints.derivative_penalty.map(|w| {
        let n0 = ys[0] / scale * (times[0] / constraints.tau0).exp();
        let delta = 1e-3 * times[times.len() - 1];
        (w, delta, -n0 / constraints.tau0)
    });
    Ok(Problem {
        times,
        ys: ys.iter().map(|y| y / scale).collect(),
        scale,
        n_terms,
        penalty,
    })
}

/// Deterministic Latin-hypercube starts over `(ln B_i, C_i)`.
fn starts(n_terms: usize, t_span: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let (lb_lo, lb_hi) = ((t_span / 20.0).ln(), (5.0 * t_span).ln());
    let (c_lo, c_hi) = (0.3f64, 3.0f64);
    let dims: Vec<Vec<usize>> = (0..2 * n_terms)
        .map(|_| {
            let mut strata: Vec<usize> = (0..STARTS).collect();
            strata.shuffle(&mut rng);
            strata
        })
        .collect();
    (0..STARTS)
        .map(|s| {
            (0..n_terms)
                .flat_map(|k| {
                    let u1 = (dims[2 * k][s] as f64 + rng.random::<f64>()) / STARTS as f64;
                    let u2 = (dims[2 * k + 1][s] as f64 + rng.random::<f64>()) / STARTS as f64;
                    [
                        lb_lo + (lb_hi - lb_lo) * u1,
                        exponent_inverse(c_lo * (c_hi / c_lo).powf(u2)),
                    ]
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}

fn nonzero_terms(model: &StretchedExpModel) -> usize {
    model.terms.iter().filter(|t| t.amplitude > 0.0).count()
}

struct Solution {
    params: Vec<f64>,
    model: StretchedExpModel,
    residuals: Vec<f64>,
    converged: usize,
}

fn windowed(trace: &DecayTrace, constraints: &FitConstraints, n_terms: usize) -> Result<DecayTrace> {
    trace.validate()?;
    if !(1..=3).contains(&n_terms) {
        return Err(Error::InvalidParameter(format!("n_terms = {n_terms}, expected 1 to 3")));
    }
    let data = match constraints.window {
        Some(w) if !(w > 0.0) => return Err(Error::InvalidParameter(format!("degenerate fit window {w}"))),
        Some(w) => trace.window(w),
        None => trace.clone(),
    };
    if data.len() < 3 * n_terms + 3 {
        return Err(Error::InvalidParameter(format!(
            "{} points in the fit window, need at least {}",
            data.len(),
            3 * n_terms + 3
        )));
    }
    if !(constraints.tau0 > 0.0) {
        return Err(Error::InvalidParameter("tau0 must be positive".into()));
    }
    Ok(data)
}

fn solve_multistart(data: &DecayTrace, n_terms: usize, constraints: &FitConstraints) -> Result<Solution> {
    let problem = prepare(&data.times, &data.n_excited, n_terms, constraints)?;
    let t_span = data.times[data.len() - 1].max(1e-12);
    let outcomes: Vec<(Vec<f64>, f64, bool)> = starts(n_terms, t_span).par_iter().map(|s| problem.solve(s)).collect();
    let converged = outcomes.iter().filter(|o| o.2 && o.1.is_finite()).count();
    let mut best: Option<(Vec<f64>, f64, StretchedExpModel)> = None;
    for (params, cost, _) in outcomes {
        if !cost.is_finite() {
            continue;
        }
        let model = problem.model(&params);
        let better = match &best {
            None => true,
            Some((_, c, m)) => {
                let tie = (cost - c).abs() <= 1e-10 * c.max(1e-300);
                cost < *c && !tie || tie && nonzero_terms(&model) < nonzero_terms(m)
            }
        };
        if better {
            best = Some((params, cost, model));
        }
    }
    let Some((params, _, model)) = best else {
        return Err(Error::FitFailed(format!(
            "no finite solution from {STARTS} starts on {} points",
            data.len()
        )));
    };
    let residuals = data.times.iter().zip(&data.n_excited).map(|(&t, y)| y - model.eval(t)).collect();
    Ok(Solution {
        params,
        model,
        residuals,
        converged,
    })
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Bounded least-squares fit of `n_terms` stretched exponentials.
///
/// Bounds: `A_i ≥ 0`, `B_i > 0`, `C_i ∈ [0.1, 5]`. Sixteen deterministic starts;
/// the lowest cost wins and near-ties go to the model with fewer non-zero terms.
pub fn fit_stretched(trace: &DecayTrace, n_terms: usize, constraints: &FitConstraints) -> Result<FitReport> {
    let data = windowed(trace, constraints, n_terms)?;
    let sol = solve_multistart(&data, n_terms, constraints)?;
    Ok(FitReport {
        residual_rms: rms(&sol.residuals),
        model: sol.model,
        window_end: data.times[data.len() - 1],
        times: data.times,
        residuals: sol.residuals,
        starts_converged: sol.converged,
        bootstrap: None,
    })
}

/// `fit_stretched` plus a bootstrap band on the fitted curve and on `γ(t)`.
///
/// Shot-level traces are resampled shot by shot; otherwise residuals are
/// resampled after inflating them by `√(m/(m − p))` for the `p = 3·n_terms`
/// fitted parameters. Each resample refits from the best-fit parameters. Bands
/// are the 15.87th and 84.13th percentiles.
pub fn bootstrap_fit(
    trace: &DecayTrace,
    n_terms: usize,
    constraints: &FitConstraints,
    resamples: usize,
    seed: u64,
) -> Result<FitReport> {
    if resamples < 2 {
        return Err(Error::InvalidParameter("bootstrap needs at least two resamples".into()));
    }
    let data = windowed(trace, constraints, n_terms)?;
    let sol = solve_multistart(&data, n_terms, constraints)?;
    let m = data.len();
    let inflate = (m as f64 / (m as f64 - (3 * n_terms) as f64).max(1.0)).sqrt();
    let fitted: Vec<f64> = data.times.iter().map(|&t| sol.model.eval(t)).collect();

    let curves: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let ys: Vec<f64> = match &data.shots {
                Some(shots) => shots
                    .iter()
                    .map(|s| (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum::<f64>() / s.len() as f64)
                    .collect(),
                None => fitted
                    .iter()
                    .map(|f| f + inflate * sol.residuals[rng.random_range(0..m)])
                    .collect(),
            };
            let problem = prepare(&data.times, &ys, n_terms, constraints).ok()?;
            let (params, cost, _) = problem.solve(&sol.params);
            if !cost.is_finite() {
                return None;
            }
            let model = problem.model(&params);
            let curve: Vec<f64> = data.times.iter().map(|&t| model.eval(t)).collect();
            let rate: Vec<f64> = data
                .times
                .iter()
                .map(|&t| model.normalized_rate(t).unwrap_or(f64::NAN))
                .collect();
            Some((curve, rate))
        })
        .collect();

    let ok: Vec<&(Vec<f64>, Vec<f64>)> = curves.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::FitFailed("fewer than two bootstrap resamples converged".into()));
    }
    let band = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| -> (f64, f64) {
        let mut v: Vec<f64> = ok.iter().map(|c| pick(c)).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        v.sort_by(f64::total_cmp);
        (percentile(&v, LOWER_PCT), percentile(&v, UPPER_PCT))
    };
    let mut b = Bootstrap {
        resamples,
        failed: resamples - ok.len(),
        times: data.times.clone(),
        curve_lower: Vec::with_capacity(m),
        curve_upper: Vec::with_capacity(m),
        rate_lower: Vec::with_capacity(m),
        rate_upper: Vec::with_capacity(m),
    };
    for i in 0..m {
        let (lo, hi) = band(&|c| c.0[i]);
        b.curve_lower.push(lo);
        b.curve_upper.push(hi);
        let (lo, hi) = band(&|c| c.1[i]);
        b.rate_lower.push(lo);
        b.rate_upper.push(hi);
    }
    Ok(FitReport {
        residual_rms: rms(&sol.residuals),
        model: sol.model,
        window_end: data.times[m - 1],
        times: data.times,
        residuals: sol.residuals,
        starts_converged: sol.converged,
        bootstrap: Some(b),
    })
}

/// Largest relative shortfall of a two-term fit below independent decay,
/// `max_t (g(t) − f(t))/g(t)` with `g(t) = N(0) e^{−t/τ0}`, over `[0, 1.75τ0]`.
///
/// The fit carries the initial-slope penalty, since a product state starts out
/// decaying at the independent rate.
pub fn resonance_deviation(trace: &DecayTrace, tau0: f64) -> Result<f64> {
    let window = 1.75 * tau0;
    trace.validate()?;
    if trace.is_empty() || trace.times[0] != 0.0 {
        return Err(Error::InvalidParameter("trace must start at t = 0".into()));
    }
    if trace.times[trace.len() - 1] < window * (1.0 - 1e-9) {
        return Err(Error::InvalidParameter(format!("trace ends before {window}")));
    }
    let constraints = FitConstraints {
        derivative_penalty: Some(1.0),
        window: Some(window),
        tau0,
    };
    let report = fit_stretched(trace, 2, &constraints)?;
    let n0 = trace.n_excited[0];
    Ok(report
        .times
        .iter()
        .map(|&t| {
            let g = n0 * (-t / tau0).exp();
            (g - report.model.eval(t)) / g
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailWindow {
    /// The last three samples of the trace.
    Linear,
    /// The samples closest to `t_end/4`, `t_end/2` and `t_end`.
    Log,
}

/// Late-time decay rate `1/τ_tail` from an exponential fit (least squares on
/// `ln N`) to three late samples.
pub fn subradiant_tail(trace: &DecayTrace, window: TailWindow) -> Result<f64> {
    trace.validate()?;
    let n = trace.len();
    if n < 3 {
        return Err(Error::InvalidParameter("need at least three samples".into()));
    }
    let idx: Vec<usize> = match window {
        TailWindow::Linear => vec![n - 3, n - 2, n - 1],
        TailWindow::Log => {
            let t_end = trace.times[n - 1];
            let nearest = |target: f64| {
                (0..n)
                    .min_by(|&a, &b| (trace.times[a] - target).abs().total_cmp(&(trace.times[b] - target).abs()))
                    .unwrap()
            };
            let mut v = vec![nearest(t_end / 4.0), nearest(t_end / 2.0), n - 1];
            v.dedup();
            if v.len() < 3 {
                return Err(Error::InvalidParameter("trace too coarse for a log-spaced tail window".into()));
            }
            v
        }
    };
    let mut pts = Vec::with_capacity(3);
    for &i in &idx {
        let y = trace.n_excited[i];
        if !(y > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "non-positive population {y} at t = {}",
                trace.times[i]
            )));
        }
        pts.push((trace.times[i], y.ln()));
    }
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    Ok(-sxy / sxx)
}
