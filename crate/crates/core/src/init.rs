//! Initial conditions: uncorrelated product states of the emitters.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Product,
}

/// Product initial state.
///
/// * `coherent = false`: each atom independently excited with probability
///   `excitation_probability`, no coherences.
/// * `coherent = true`: each atom in `cos(θ/2)|g⟩ + e^{i 2π k_L·r} sin(θ/2)|e⟩`
///   with `θ = rotation_angle` and `k_L = phase_gradient` (units of 2π/λ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    #[serde(default)]
    pub mode: InitMode,
    #[serde(default = "one")]
    pub excitation_probability: f64,
    #[serde(default)]
    pub rotation_angle: f64,
    #[serde(default)]
    pub phase_gradient: Option<Vec3>,
    #[serde(default)]
    pub coherent: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for InitialStateSpec {
    fn default() -> Self {
        Self::fully_inverted()
    }
}

impl InitialStateSpec {
    pub fn fully_inverted() -> Self {
        Self::incoherent(1.0)
    }

    pub fn incoherent(p: f64) -> Self {
        Self {
            mode: InitMode::Product,
            excitation_probability: p,
            rotation_angle: 0.0,
            phase_gradient: None,
            coherent: false,
        }
    }

    pub fn coherent(theta: f64, phase_gradient: Option<Vec3>) -> Self {
        Self {
            mode: InitMode::Product,
            excitation_probability: (theta / 2.0).sin().powi(2),
            rotation_angle: theta,
            phase_gradient,
            coherent: true,
        }
    }

    /// Coherent rotation that leaves a fraction `p` of the atoms excited.
    pub fn coherent_fraction(p: f64, phase_gradient: Option<Vec3>) -> Self {
        Self::coherent(2.0 * p.clamp(0.0, 1.0).sqrt().asin(), phase_gradient)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.coherent && !(0.0..=1.0).contains(&self.excitation_probability) {
            return Err(Error::InvalidParameter(format!(
                "excitation probability {} outside [0, 1]",
                self.excitation_probability
            )));
        }
        if self.coherent && !self.rotation_angle.is_finite() {
            return Err(Error::InvalidParameter("rotation angle must be finite".into()));
        }
        Ok(())
    }

    /// Excited-state probability of every atom.
    pub fn population(&self) -> f64 {
        if self.coherent {
            (self.rotation_angle / 2.0).sin().powi(2)
        } else {
            self.excitation_probability
        }
    }

    /// `(⟨σ^ee⟩, ⟨σ⟩)` for an atom at `r`.
    pub fn site_moments(&self, r: Vec3) -> (f64, Complex64) {
        if !self.coherent {
            return (self.excitation_probability, Complex64::new(0.0, 0.0));
        }
        let half = self.rotation_angle / 2.0;
        let phase = self
            .phase_gradient
            .map(|k| TAU * (k[0] * r[0] + k[1] * r[1] + k[2] * r[2]))
            .unwrap_or(0.0);
        let amp = half.cos() * half.sin();
        (half.sin().powi(2), Complex64::from_polar(amp, phase))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coherent_fraction_round_trip() {
        for p in [0.1, 0.25, 0.5, 0.96] {
            let s = InitialStateSpec::coherent_fraction(p, None);
            assert!((s.population() - p).abs() < 1e-14);
            let (n, m) = s.site_moments([0.0; 3]);
            assert!((m.norm_sqr() - n * (1.0 - n)).abs() < 1e-14);
        }
    }

    #[test]
    fn phase_follows_gradient() {
        let s = InitialStateSpec::coherent(1.0, Some([1.0, 0.0, 0.0]));
        let (_, m0) = s.site_moments([0.0; 3]);
        let (_, m1) = s.site_moments([0.25, 0.0, 0.0]);
        assert!(((m1 / m0).arg() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
