use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coupling_matrices, CouplingMatrices};
use crate::error::{Error, Result};
use crate::geometry::{build_array, DisorderSpec, DriveGeometry, LatticeSpec};
use crate::seeds::derive_seed;
use crate::stats::percentile;

const MAX_RESAMPLES: u64 = 16;

/// Eigen-decomposition of `Γ`: collective jump rates and their modes.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpSpectrum {
    /// Rates in descending order.
    pub rates: Vec<f64>,
    /// `modes[k]` is the unit eigenvector belonging to `rates[k]`.
    pub modes: Vec<Vec<f64>>,
}

impl JumpSpectrum {
    /// Population variance of the jump rates.
    pub fn rate_variance(&self) -> f64 {
        let n = self.rates.len() as f64;
        let mean = self.rates.iter().sum::<f64>() / n;
        self.rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
    }

    pub fn brightest(&self) -> f64 {
        self.rates[0]
    }
}

pub fn jump_spectrum(couplings: &CouplingMatrices) -> JumpSpectrum {
    let n = couplings.n();
    let m = DMatrix::from_fn(n, n, |a, b| couplings.gamma[[a, b]]);
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // Sign convention: first clearly non-zero component positive.
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (rates, modes) = pairs.into_iter().unzip();
    JumpSpectrum { rates, modes }
}

/// Order statistics of the jump spectrum at one lattice spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScanRow {
    pub spacing: f64,
    pub variance_p25: f64,
    pub variance_median: f64,
    pub variance_p75: f64,
    pub brightest_p25: f64,
    pub brightest_median: f64,
    pub brightest_p75: f64,
}

/// Jump-spectrum statistics across lattice spacings and disorder realizations.
///
/// Realization `r` at spacing index `s` uses the seed `derive_seed(master_seed, s·2³² + r)`;
/// an empty loading draw is redrawn with a further derived seed, up to a bounded
/// number of times.
pub fn spectrum_scan(
    template: &LatticeSpec,
    spacings: &[f64],
    disorder: &DisorderSpec,
    drive: &DriveGeometry,
    realizations: usize,
    master_seed: u64,
) -> Result<Vec<SpectrumScanRow>> {
    if realizations == 0 {
        return Err(Error::InvalidParameter("spectrum scan needs at least one realization".into()));
    }
    let cells: Vec<(usize, usize)> = (0..spacings.len())
        .flat_map(|s| (0..realizations).map(move |r| (s, r)))
        .collect();
    let values: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(s, r)| {
            let mut spec = template.clone();
            spec.spacing = spacings[s];
            let cell_seed = derive_seed(master_seed, ((s as u64) << 32) | r as u64);
            let mut attempt = 0;
            loop {
                let seed = if attempt == 0 { cell_seed } else { derive_seed(cell_seed, attempt) };
                let dis = DisorderSpec {
                    seed,
                    ..disorder.clone()
                };
                match build_array(&spec, &dis, drive, seed) {
                    Ok(array) => {
                        let spectrum = jump_spectrum(&coupling_matrices(&array, None)?);
                        return Ok((spectrum.rate_variance(), spectrum.brightest()));
                    }
                    Err(Error::EmptyRealization { .. }) if attempt < MAX_RESAMPLES => attempt += 1,
                    Err(e) => return Err(e),
                }
            }
        })
        .collect::<Result<_>>()?;

    Ok(spacings
        .iter()
        .enumerate()
        .map(|(s, &spacing)| {
            let chunk = &values[s * realizations..(s + 1) * realizations];
            let mut var: Vec<f64> = chunk.iter().map(|v| v.0).collect();
            let mut bright: Vec<f64> = chunk.iter().map(|v| v.1).collect();
            var.sort_by(f64::total_cmp);
            bright.sort_by(f64::total_cmp);
            SpectrumScanRow {
                spacing,
                variance_p25: percentile(&var, 25.0),
                variance_median: percentile(&var, 50.0),
                variance_p75: percentile(&var, 75.0),
                brightest_p25: percentile(&bright, 25.0),
                brightest_median: percentile(&bright, 50.0),
                brightest_p75: percentile(&bright, 75.0),
            }
        })
        .collect())
}
