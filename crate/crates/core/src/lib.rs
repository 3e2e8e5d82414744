//! Collective spontaneous emission of two-level emitters in sub-wavelength arrays.
//!
//! Units throughout: lengths in wavelengths λ, times in single-atom lifetimes
//! τ = 1/γ0, rates in γ0.

pub mod analysis;
pub mod complex_view;
pub mod couplings;
pub mod cumulant;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod init;
pub mod ode;
pub mod seeds;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/couplings.md")]
    mod couplings {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/cumulants.md")]
    mod cumulants {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/correlations.md")]
    mod correlations {}
}
