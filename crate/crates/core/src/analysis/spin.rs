//! Collective spin observables `S_z`, `M² = ⟨S_x² + S_y²⟩` and
//! `S_tot = √(M² + ⟨S_z²⟩)`, built from spin-½ operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::ObservableTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinTrajectory {
    pub n_atoms: usize,
    pub times: Vec<f64>,
    pub s_z: Vec<f64>,
    pub m2: Vec<f64>,
    /// `√⟨S²⟩`; at most `√(N/2 (N/2 + 1))`, which exceeds `N/2` by about ½ for small N.
    pub s_tot: Vec<f64>,
}

pub fn spin_trajectory(trace: &ObservableTrace) -> Result<SpinTrajectory> {
    let n = trace.len();
    for (name, col) in [("S_z", &trace.s_z), ("M2", &trace.m2), ("S_z_sq", &trace.s_z_sq)] {
        if col.len() != n {
            return Err(Error::Malformed(format!("{name} has {} values for {n} times", col.len())));
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::Malformed(format!("{name} column missing or non-finite")));
        }
    }
    if trace.m2.iter().any(|m| *m < -1e-9) {
        return Err(Error::Malformed("negative M2".into()));
    }
    Ok(SpinTrajectory {
        n_atoms: trace.n_atoms,
        times: trace.times.clone(),
        s_z: trace.s_z.clone(),
        m2: trace.m2.clone(),
        s_tot: trace
            .m2
            .iter()
            .zip(&trace.s_z_sq)
            .map(|(m, z)| (m + z).max(0.0).sqrt())
            .collect(),
    })
}

/// `(S_z, ⟨S²⟩)` for N atoms decaying independently after a rotation that leaves
/// a fraction `sin²θ` excited, at `T = e^{−γt}`:
/// `S_z = N(−½ + sin²θ T)`, `⟨S²⟩ = 3N/4 + N(N−1)(¼ + T(T−1) sin⁴θ)`.
///
/// `⟨S²⟩` is symmetric under `T → 1 − T`.
pub fn analytic_independent_spin(theta: f64, n: usize, t_transformed: f64) -> (f64, f64) {
    let nf = n as f64;
    let s2 = theta.sin().powi(2);
    let t = t_transformed;
    let s_z = nf * (-0.5 + s2 * t);
    let s_tot_sq = 0.75 * nf + nf * (nf - 1.0) * (0.25 + t * (t - 1.0) * s2 * s2);
    (s_z, s_tot_sq)
}

/// Transverse magnetization from the atom-number statistics of a phase sweep,
/// `M = √(Var(N_meas)/(2⟨N_meas⟩²) − Var(N_load)/⟨N_meas⟩)`.
///
/// Returns `None` when the loading correction exceeds the measured variance,
/// i.e. the signal is below the noise floor.
pub fn transverse_from_shots(var_measured: f64, mean_measured: f64, var_loading: f64) -> Result<Option<f64>> {
    if !(mean_measured > 0.0) || !(var_measured >= 0.0) || !(var_loading >= 0.0) {
        return Err(Error::InvalidParameter(
            "need a positive mean and non-negative variances".into(),
        ));
    }
    let arg = var_measured / (2.0 * mean_measured * mean_measured) - var_loading / mean_measured;
    Ok((arg >= 0.0).then(|| arg.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn endpoints() {
        for n in [1usize, 4, 100] {
            let nf = n as f64;
            let (sz, s2) = analytic_independent_spin(FRAC_PI_2, n, 1.0);
            assert!((sz - nf / 2.0).abs() < 1e-12);
            assert!((s2 - (0.75 * nf + nf * (nf - 1.0) / 4.0)).abs() < 1e-9);
            let (sz0, s20) = analytic_independent_spin(FRAC_PI_2, n, 0.0);
            assert!((sz0 + nf / 2.0).abs() < 1e-12);
            assert!((s20 - s2).abs() < 1e-9);
        }
    }

    #[test]
    fn t_symmetry() {
        for theta in [0.1, 0.7, FRAC_PI_2, 2.5] {
            for k in 0..=100 {
                let t = k as f64 / 100.0;
                let a = analytic_independent_spin(theta, 37, t).1;
                let b = analytic_independent_spin(theta, 37, 1.0 - t).1;
                assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }

    #[test]
    fn noise_floor_is_reported() {
        assert_eq!(transverse_from_shots(1.0, 10.0, 1.0).unwrap(), None);
        let m = transverse_from_shots(200.0, 10.0, 0.0).unwrap().unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }
}
