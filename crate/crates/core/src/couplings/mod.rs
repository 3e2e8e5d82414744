//! Photon-mediated couplings between emitters.
//!
//! `J` (coherent exchange) and `Γ` (collective dissipation) follow from the
//! vacuum Green's tensor contracted with the transition dipole. Both are real
//! symmetric `N × N` matrices in units of the single-atom rate γ0, with
//! `Γ_ii = γ0` and `J_ii = 0`.

mod cache;
mod green;
mod motion;
mod spectrum;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CouplingCache};
pub use green::{green_tensor, pair_couplings, sandwich, Tensor3, WAVENUMBER};
pub use motion::MotionSpec;
pub use spectrum::{jump_spectrum, spectrum_scan, JumpSpectrum, SpectrumScanRow};

use crate::error::{Error, Result};
use crate::geometry::{dipole_vector, AtomArray, Vec3};

/// Single-emitter decay rate in core units.
pub const GAMMA0: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrices {
    pub j: Array2<f64>,
    pub gamma: Array2<f64>,
    pub gamma0: f64,
}

impl CouplingMatrices {
    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    /// Independent emitters: `Γ = γ0·I`, `J = 0`.
    pub fn independent(n: usize) -> Self {
        Self {
            j: Array2::zeros((n, n)),
            gamma: Array2::eye(n) * GAMMA0,
            gamma0: GAMMA0,
        }
    }

    /// Builds matrices from explicit entries, checking shape and symmetry.
    pub fn from_parts(j: Array2<f64>, gamma: Array2<f64>) -> Result<Self> {
        let n = gamma.nrows();
        if gamma.ncols() != n || j.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: j.nrows(),
            });
        }
        for a in 0..n {
            for b in 0..n {
                if (gamma[[a, b]] - gamma[[b, a]]).abs() > 1e-12 || (j[[a, b]] - j[[b, a]]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("coupling matrices must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            j,
            gamma,
            gamma0: GAMMA0,
        })
    }

    /// `K = Γ/2 + iJ`, the kernel that appears in every equation of motion.
    pub fn kernel(&self) -> Array2<Complex64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(a, b)| {
            Complex64::new(0.5 * self.gamma[[a, b]], self.j[[a, b]])
        })
    }

    /// Permutes atoms: entry `(a, b)` of the result is entry `(perm[a], perm[b])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        Self {
            j: Array2::from_shape_fn((n, n), |(a, b)| self.j[[perm[a], perm[b]]]),
            gamma: Array2::from_shape_fn((n, n), |(a, b)| self.gamma[[perm[a], perm[b]]]),
            gamma0: self.gamma0,
        }
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Coupling matrices for the occupied atoms of `array`, optionally averaged
/// over the motional wavepackets described by `motion`.
pub fn coupling_matrices(array: &AtomArray, motion: Option<&MotionSpec>) -> Result<CouplingMatrices> {
    array.validate()?;
    let positions = array.occupied_positions();
    let n = positions.len();
    if array.colocated {
        return Ok(CouplingMatrices {
            j: Array2::zeros((n, n)),
            gamma: Array2::from_elem((n, n), GAMMA0),
            gamma0: GAMMA0,
        });
    }
    let dipole = dipole_vector(&array.drive);
    let motion = motion.filter(|m| !m.is_static());
    if let Some(m) = motion {
        m.validate()?;
    }

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let bands = motion.map(|m| m.sample_bands(n));
    let values: Vec<(f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let r = sub(positions[a], positions[b]);
            match (motion, &bands) {
                (Some(m), Some(bands)) => Ok(m.averaged_pair(r, bands[a], bands[b], &array.drive, &dipole, k as u64)),
                _ => pair_couplings(r, &dipole),
            }
        })
        .collect::<Result<_>>()?;

    let mut j = Array2::zeros((n, n));
    let mut gamma = Array2::eye(n) * GAMMA0;
    for (&(a, b), &(jv, gv)) in pairs.iter().zip(&values) {
        j[[a, b]] = jv;
        j[[b, a]] = jv;
        gamma[[a, b]] = gv;
        gamma[[b, a]] = gv;
    }
    Ok(CouplingMatrices {
        j,
        gamma,
        gamma0: GAMMA0,
    })
}
