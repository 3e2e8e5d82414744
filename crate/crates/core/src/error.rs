use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every lattice site came out unoccupied. Callers may resample with a new seed.
    #[error("empty realization: no occupied sites (seed {seed})")]
    EmptyRealization { seed: u64 },

    #[error("atoms {first} and {second} share the same position")]
    DuplicatePosition { first: usize, second: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("system of {atoms} atoms exceeds the exact-solver cap of {cap}")]
    TooManyAtoms { atoms: usize, cap: usize },

    #[error("step size collapsed to {step:e} at t = {time}")]
    StepSizeCollapse { time: f64, step: f64 },

    #[error("unphysical cumulant state at t = {time}: {reason}")]
    Unphysical { time: f64, reason: String },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("model is non-positive at t = {time}")]
    NonPositiveModel { time: f64 },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
