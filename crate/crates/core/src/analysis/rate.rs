use serde::{Deserialize, Serialize};

use super::DecayTrace;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// `t0 + dt/2`.
    pub time: f64,
    /// Normalized decay rate `1/τ̂`.
    pub rate: f64,
    /// Set when the population did not fall across the interval (`N1 ≥ N0`).
    pub rising: bool,
}

/// Normalized decay rate between two population samples, assuming the decay is a
/// single exponential across the interval.
///
/// With `D = 2(N0 − N1)/((N0 + N1) dt)` the model gives `D·dt/2 = tanh(dt/2τ)`,
/// so `1/τ = ln((2 + D dt)/(2 − D dt))/dt`. This is exact for pure exponentials at
/// any `dt` and reduces to `D` as `dt → 0`. The ratio `(2 + D dt)/(2 − D dt)`
/// equals `N0/N1`; evaluating it that way avoids the cancellation in `2 − D dt`
/// when the population falls by many e-folds.
pub fn instantaneous_rate(n0: f64, n1: f64, t0: f64, dt: f64) -> Result<RateEstimate> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(n0 >= 0.0) || !(n1 >= 0.0) || n0 + n1 == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "populations must be non-negative and not both zero, got {n0} and {n1}"
        )));
    }
    // |D_M dt| = 2 exactly when one population is zero. Test that directly, since
    // the rounded ratio reaches 2 long before N1/N0 does.
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::InvalidParameter(
            "|D_M dt| = 2 is not reachable by exponential decay".into(),
        ));
    }
    Ok(RateEstimate {
        time: t0 + dt / 2.0,
        rate: (n0 / n1).ln() / dt,
        rising: n1 >= n0,
    })
}

/// Rate estimates between consecutive samples of a trace.
pub fn discrete_rates(trace: &DecayTrace) -> Result<Vec<RateEstimate>> {
    trace
        .times
        .windows(2)
        .zip(trace.n_excited.windows(2))
        .map(|(t, n)| instantaneous_rate(n[0], n[1], t[0], t[1] - t[0]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_populations_give_zero() {
        let r = instantaneous_rate(3.0, 3.0, 1.0, 0.5).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!(r.rising);
        assert_eq!(r.time, 1.25);
    }

    #[test]
    fn growth_gives_negative_rate() {
        let r = instantaneous_rate(1.0, 2.0, 0.0, 0.1).unwrap();
        assert!(r.rate < 0.0 && r.rising);
    }

    #[test]
    fn small_dt_tends_to_midpoint_derivative() {
        let (n0, n1, dt) = (1.0, 0.999, 1e-4);
        let d_m = (n0 - n1) / (n0 + n1) * 2.0 / dt;
        let r = instantaneous_rate(n0, n1, 0.0, dt).unwrap();
        assert!((r.rate - d_m).abs() / d_m < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(instantaneous_rate(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(instantaneous_rate(1.0, 0.5, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_exponentials(t0 in 0.0f64..10.0, dt in 1e-3f64..5.0, tau in 0.1f64..10.0) {
            let n = |t: f64| 100.0 * (-t / tau).exp();
            let r = instantaneous_rate(n(t0), n(t0 + dt), t0, dt).unwrap();
            prop_assert!((r.rate - 1.0 / tau).abs() <= 1e-12 * (1.0 / tau).max(1.0));
        }
    }
}
