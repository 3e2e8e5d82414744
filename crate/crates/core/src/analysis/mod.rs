//! Data reduction: decay-rate estimators, stretched-exponential fits, correlation
//! maps and total-spin trajectories.

mod correlations;
mod fit;
mod lm;
mod rate;
mod spin;

use serde::{Deserialize, Serialize};

pub use correlations::{
    connected_correlations, connected_correlations_from_shots, CorrelationMap, Region,
};
pub use fit::{
    bootstrap_fit, fit_stretched, normalized_rate_from_fit, resonance_deviation, subradiant_tail, Bootstrap,
    FitConstraints, FitReport, StretchedExpModel, StretchedTerm, TailWindow,
};
pub use lm::{levenberg_marquardt, LmOptions, LmOutcome};
pub use rate::{discrete_rates, instantaneous_rate, RateEstimate};
pub use spin::{analytic_independent_spin, spin_trajectory, transverse_from_shots, SpinTrajectory};

use crate::error::{Error, Result};
use crate::trace::ObservableTrace;

/// Excited-state population against time, optionally with the per-shot counts
/// the mean was formed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub times: Vec<f64>,
    pub n_excited: Vec<f64>,
    /// `shots[k]` lists the atom counts recorded at `times[k]`.
    #[serde(default)]
    pub shots: Option<Vec<Vec<f64>>>,
    pub n_atoms: usize,
}

impl DecayTrace {
    pub fn new(times: Vec<f64>, n_excited: Vec<f64>, n_atoms: usize) -> Result<Self> {
        let trace = Self {
            times,
            n_excited,
            shots: None,
            n_atoms,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// Builds the trace from per-shot counts; the population is their mean.
    pub fn from_shots(times: Vec<f64>, shots: Vec<Vec<f64>>, n_atoms: usize) -> Result<Self> {
        if shots.len() != times.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: shots.len(),
            });
        }
        if shots.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidParameter("every time point needs at least one shot".into()));
        }
        let n_excited = shots.iter().map(|s| crate::stats::mean(s)).collect();
        let trace = Self {
            times,
            n_excited,
            shots: Some(shots),
            n_atoms,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.n_excited.len() {
            return Err(Error::DimensionMismatch {
                expected: self.times.len(),
                found: self.n_excited.len(),
            });
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("trace times must be strictly increasing".into()));
        }
        if self.n_excited.iter().any(|n| !(*n >= 0.0)) {
            return Err(Error::InvalidParameter("populations must be non-negative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Restriction to `t ≤ t_max`.
    pub fn window(&self, t_max: f64) -> Self {
        let k = self.times.iter().take_while(|&&t| t <= t_max * (1.0 + 1e-12)).count();
        Self {
            times: self.times[..k].to_vec(),
            n_excited: self.n_excited[..k].to_vec(),
            shots: self.shots.as_ref().map(|s| s[..k].to_vec()),
            n_atoms: self.n_atoms,
        }
    }
}

impl From<&ObservableTrace> for DecayTrace {
    fn from(trace: &ObservableTrace) -> Self {
        Self {
            times: trace.times.clone(),
            n_excited: trace.n_excited.iter().map(|n| n.max(0.0)).collect(),
            shots: None,
            n_atoms: trace.n_atoms,
        }
    }
}
