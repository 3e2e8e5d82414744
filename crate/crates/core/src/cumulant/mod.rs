//! Approximate dynamics from a truncated hierarchy of moment equations.
//!
//! At order α every joint cumulant involving more than α distinct atoms is set
//! to zero, which closes the Heisenberg equations of the moments of up to α
//! atoms. Order 1 is mean field; orders 2 and 3 keep pair and triple
//! correlations.

mod ensemble;
mod evolve;
pub mod generic;
mod rhs;
mod state;

use serde::{Deserialize, Serialize};

pub use ensemble::{
    average, ensemble_run, realization_array, realization_seed, EnsembleConfig, EnsembleResult, RealizationFailure,
    RealizationInfo,
};
pub use evolve::{evolve_cumulant, evolve_state, evolve_system, CumulantOptions, CumulantRun};
pub use rhs::CumulantSystem;
pub use state::{CumulantState, Layout};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClosureOrder {
    pub alpha: u8,
    /// Whether odd moments such as `⟨σ_i⟩` are tracked.
    pub coherent_sector: bool,
}

impl ClosureOrder {
    pub fn new(alpha: u8, coherent_sector: bool) -> Result<Self> {
        let order = Self { alpha, coherent_sector };
        order.validate()?;
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.alpha, self.coherent_sector) {
            (1 | 2, _) | (3, false) => Ok(()),
            (3, true) => Err(Error::InvalidParameter(
                "third-order closure is implemented for the zero-coherence sector only".into(),
            )),
            (a, _) => Err(Error::InvalidParameter(format!("closure order {a} not in {{1, 2, 3}}"))),
        }
    }
}
