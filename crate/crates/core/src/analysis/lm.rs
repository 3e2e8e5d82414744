//! Levenberg–Marquardt for small dense least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-14,
            xtol: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `½ Σ r²` at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

fn jacobian<F: Fn(&[f64], &mut [f64])>(residual: &F, p: &[f64], r0: &[f64], jac: &mut DMatrix<f64>) {
    let mut q = p.to_vec();
    let mut r = vec![0.0; r0.len()];
    for k in 0..p.len() {
        let h = 1e-7 * p[k].abs().max(1.0);
        q[k] = p[k] + h;
        residual(&q, &mut r);
        for i in 0..r0.len() {
            jac[(i, k)] = (r[i] - r0[i]) / h;
        }
        q[k] = p[k];
    }
}

/// Minimizes `½‖r(p)‖²` where `residual(p, r)` fills the `m` residuals.
///
/// Forward-difference Jacobian, Marquardt scaling of the damping term. Non-finite
/// residuals count as a rejected step.
pub fn levenberg_marquardt<F>(residual: F, m: usize, p0: &[f64], opts: &LmOptions) -> LmOutcome
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    residual(&p, &mut r);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return LmOutcome {
            params: p,
            cost: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    let mut lambda = opts.initial_lambda;
    let mut jac = DMatrix::zeros(m, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        jacobian(&residual, &p, &r, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&rv);
        if g.amax() < 1e-300 {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            for k in 0..n {
                trial[k] = p[k] + step[k];
            }
            residual(&trial, &mut r_trial);
            let new_cost = cost_of(&r_trial);
            if new_cost.is_finite() && new_cost <= cost {
                let small_step = step.norm() <= opts.xtol * (DVector::from_column_slice(&p).norm() + opts.xtol);
                let small_gain = cost - new_cost <= opts.ftol * cost;
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = new_cost;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // No downhill step at any damping: a stationary point to working precision.
            converged = true;
            break;
        }
        if converged || cost == 0.0 {
            converged = true;
            break;
        }
    }
    LmOutcome {
        params: p,
        cost,
        iterations,
        converged,
    }
}
