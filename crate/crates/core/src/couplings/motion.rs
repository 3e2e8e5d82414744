use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::green::pair_couplings;
use crate::error::{Error, Result};
use crate::geometry::{DriveGeometry, Vec3};
use crate::seeds::derive_seed;

/// Harmonic-trap wavepackets used to smear the couplings.
///
/// Every atom sits in the motional ground state, except that with probability
/// `excited_band_probability` it occupies the first excited band along the
/// drive (beam) axis. Averages are Monte Carlo over both atoms' positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// rms widths along x, y, z in units of λ.
    pub widths: Vec3,
    pub excited_band_probability: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            widths: [0.05, 0.05, 0.1],
            excited_band_probability: 0.06,
            samples: 20_000,
            seed: 0,
        }
    }
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("motional widths must be non-negative".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("motional averaging needs at least one sample".into()));
        }
        if !(0.0..=1.0).contains(&self.excited_band_probability) {
            return Err(Error::InvalidParameter("excited band probability outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Zero widths: the smeared couplings reduce to the point-atom values.
    pub fn is_static(&self) -> bool {
        self.widths.iter().all(|&w| w == 0.0)
    }

    /// Which atoms occupy the excited band along the drive axis.
    pub fn sample_bands(&self, n: usize) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX));
        (0..n)
            .map(|_| rng.random::<f64>() < self.excited_band_probability)
            .collect()
    }

    fn displacement(&self, excited: bool, axis: Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
        let mut d: Vec3 = std::array::from_fn(|k| self.widths[k] * rng.sample::<f64, _>(StandardNormal));
        if excited {
            // First excited oscillator state: |ψ₁(u)|² ∝ u² e^{−u²/2} in units of the
            // ground-state rms width, i.e. |u| is chi-distributed with three degrees of freedom.
            let along = d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2];
            let width = ((self.widths[0] * axis[0]).powi(2)
                + (self.widths[1] * axis[1]).powi(2)
                + (self.widths[2] * axis[2]).powi(2))
            .sqrt();
            let chi: f64 = (0..3)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum::<f64>()
                .sqrt();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let u = sign * chi * width;
            for k in 0..3 {
                d[k] += (u - along) * axis[k];
            }
        }
        d
    }

    /// Monte Carlo estimate of `(J, Γ)` for one pair at mean separation `r`.
    pub(crate) fn averaged_pair(
        &self,
        r: Vec3,
        excited_a: bool,
        excited_b: bool,
        drive: &DriveGeometry,
        dipole: &[Complex64; 3],
        pair_index: u64,
    ) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, pair_index));
        let axis = drive.beam_direction;
        let mut sum_j = 0.0;
        let mut sum_g = 0.0;
        for _ in 0..self.samples {
            let da = self.displacement(excited_a, axis, &mut rng);
            let db = self.displacement(excited_b, axis, &mut rng);
            let rel = [r[0] + da[0] - db[0], r[1] + da[1] - db[1], r[2] + da[2] - db[2]];
            match pair_couplings(rel, dipole) {
                Ok((j, g)) => {
                    sum_j += j;
                    sum_g += g;
                }
                // Coincident sample: contact limit.
                Err(_) => sum_g += 1.0,
            }
        }
        let n = self.samples as f64;
        (sum_j / n, sum_g / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dipole_vector;

    #[test]
    fn smearing_reduces_nearest_neighbour_dissipation() {
        let drive = DriveGeometry::default();
        let e = dipole_vector(&drive);
        let r = [0.316, 0.0, 0.0];
        let (_, point) = pair_couplings(r, &e).unwrap();
        let m = MotionSpec {
            samples: 100_000,
            ..MotionSpec::default()
        };
        let (_, smeared) = m.averaged_pair(r, false, false, &drive, &e, 0);
        assert!(smeared.abs() < point.abs(), "{smeared} vs {point}");
    }

    #[test]
    fn excited_band_has_larger_spread_along_axis() {
        let m = MotionSpec::default();
        let axis = DriveGeometry::default().beam_direction;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut ground = 0.0;
        let mut excited = 0.0;
        for _ in 0..n {
            let g = m.displacement(false, axis, &mut rng);
            let e = m.displacement(true, axis, &mut rng);
            ground += (g[0] * axis[0] + g[1] * axis[1]).powi(2);
            excited += (e[0] * axis[0] + e[1] * axis[1]).powi(2);
        }
        // ⟨x²⟩ is s² for n = 0 and 3s² for n = 1.
        let ratio = excited / ground;
        assert!((ratio - 3.0).abs() < 0.15, "{ratio}");
    }
}
