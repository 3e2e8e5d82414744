use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::couplings::CouplingMatrices;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::init::InitialStateSpec;
use crate::trace::PairSnapshot;

/// Density matrix of `n` two-level atoms in the occupancy basis.
///
/// Basis index bit `i` is atom `i` (1 = excited). Entries are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_entries(n: usize, data: Vec<Complex64>) -> Result<Self> {
        let dim = 1usize << n;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        let dim = 1usize << n;
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    /// `|basis⟩⟨basis|`.
    pub fn basis_state(n: usize, basis: usize) -> Self {
        let mut rho = Self::zeros(n);
        let dim = rho.dim();
        rho.data[basis * dim + basis] = Complex64::new(1.0, 0.0);
        rho
    }

    pub fn from_pure(n: usize, psi: &[Complex64]) -> Result<Self> {
        let dim = 1usize << n;
        if psi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: psi.len(),
            });
        }
        let data = (0..dim * dim).map(|k| psi[k / dim] * psi[k % dim].conj()).collect();
        Ok(Self { n, data })
    }

    /// Product state with per-atom populations and coherences `⟨σ_i⟩`.
    pub fn product(populations: &[f64], coherences: &[Complex64]) -> Self {
        let n = populations.len();
        let dim = 1usize << n;
        // Single-site blocks indexed [y_bit][z_bit].
        let blocks: Vec<[[Complex64; 2]; 2]> = populations
            .iter()
            .zip(coherences)
            .map(|(&p, &m)| {
                [
                    [Complex64::new(1.0 - p, 0.0), m.conj()],
                    [m, Complex64::new(p, 0.0)],
                ]
            })
            .collect();
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        data.par_chunks_mut(dim).enumerate().for_each(|(y, row)| {
            for (z, out) in row.iter_mut().enumerate() {
                let mut v = Complex64::new(1.0, 0.0);
                for (i, b) in blocks.iter().enumerate() {
                    v *= b[(y >> i) & 1][(z >> i) & 1];
                    if v == Complex64::new(0.0, 0.0) {
                        break;
                    }
                }
                *out = v;
            }
        });
        Self { n, data }
    }

    pub fn from_init(init: &InitialStateSpec, positions: &[Vec3]) -> Result<Self> {
        init.validate()?;
        let (pops, cohs): (Vec<f64>, Vec<Complex64>) = positions.iter().map(|&r| init.site_moments(r)).unzip();
        Ok(Self::product(&pops, &cohs))
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn get(&self, y: usize, z: usize) -> Complex64 {
        self.data[y * self.dim() + z]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_entries(self) -> Vec<Complex64> {
        self.data
    }

    pub fn trace(&self) -> Complex64 {
        let dim = self.dim();
        (0..dim).map(|y| self.data[y * dim + y]).sum()
    }

    /// Largest `|ρ_yz − conj(ρ_zy)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.dim();
        (0..dim)
            .flat_map(|y| (0..y).map(move |z| (y, z)))
            .map(|(y, z)| (self.get(y, z) - self.get(z, y).conj()).norm())
            .chain((0..dim).map(|y| self.get(y, y).im.abs()))
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.dim();
        // Hermitian part, to keep the eigensolver on the symmetric path.
        let m = DMatrix::from_fn(dim, dim, |y, z| 0.5 * (self.get(y, z) + self.get(z, y).conj()));
        m.symmetric_eigenvalues().min()
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-9) and positivity (−1e-8).
    pub fn check_physical(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::InvalidParameter(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > 1e-9 {
            return Err(Error::InvalidParameter(format!("density matrix trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::InvalidParameter(format!("density matrix eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Occupancy-basis probabilities.
    pub fn diagonal(&self) -> Vec<f64> {
        let dim = self.dim();
        (0..dim).map(|y| self.data[y * dim + y].re).collect()
    }
}

/// Single-time observables of the exact state.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactObservables {
    pub populations: Vec<f64>,
    /// `⟨σ_i† σ_j⟩`, diagonal equal to the populations.
    pub coherences: Array2<Complex64>,
    /// `⟨n_i n_j⟩`, diagonal equal to the populations.
    pub pair_populations: Array2<f64>,
    pub n_excited: f64,
    pub s_z: f64,
    pub s_z_sq: f64,
    pub m2: f64,
    pub emission_rate: f64,
}

impl ExactObservables {
    pub fn snapshot(&self, time: f64) -> PairSnapshot {
        PairSnapshot {
            time,
            populations: self.populations.clone(),
            pair_populations: self.pair_populations.clone(),
            coherences: self.coherences.clone(),
        }
    }
}

pub fn observables_exact(rho: &DensityMatrix, couplings: &CouplingMatrices) -> Result<ExactObservables> {
    let n = rho.n_atoms();
    if couplings.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: couplings.n(),
        });
    }
    let diag = rho.diagonal();
    let mut pair = Array2::<f64>::zeros((n, n));
    for (y, &p) in diag.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for i in (0..n).filter(|i| y >> i & 1 == 1) {
            for j in (0..n).filter(|j| y >> j & 1 == 1) {
                pair[[i, j]] += p;
            }
        }
    }
    let populations: Vec<f64> = (0..n).map(|i| pair[[i, i]]).collect();

    let mut coh = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        coh[[i, i]] = Complex64::new(populations[i], 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (bi, bj) = (1usize << i, 1usize << j);
            coh[[i, j]] = (0..rho.dim())
                .filter(|z| z & bj != 0 && z & bi == 0)
                .map(|z| rho.get(z, z ^ bj ^ bi))
                .sum();
        }
    }

    let nf = n as f64;
    let n_excited: f64 = populations.iter().sum();
    let mut off_re = 0.0;
    let mut sz_sq = nf / 4.0;
    let mut emission = 0.0;
    for i in 0..n {
        for j in 0..n {
            emission += couplings.gamma[[i, j]] * coh[[i, j]].re;
            if i != j {
                off_re += coh[[i, j]].re;
                sz_sq += pair[[i, j]] - 0.5 * (populations[i] + populations[j]) + 0.25;
            }
        }
    }
    Ok(ExactObservables {
        populations,
        coherences: coh,
        pair_populations: pair,
        n_excited,
        s_z: n_excited - nf / 2.0,
        s_z_sq: sz_sq,
        m2: nf / 2.0 + off_re,
        emission_rate: emission,
    })
}

/// Projective occupancy measurements: each shot is a bitmask (bit `i` = atom `i` excited).
pub fn shot_sample(rho: &DensityMatrix, shots: usize, seed: u64) -> Result<Vec<u64>> {
    let weights: Vec<f64> = rho.diagonal().into_iter().map(|p| p.max(0.0)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(format!("cannot sample shots: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..shots).map(|_| dist.sample(&mut rng) as u64).collect())
}

/// Unpacks a shot bitmask into per-atom occupations.
pub fn shot_bits(shot: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| shot >> i & 1 == 1).collect()
}
