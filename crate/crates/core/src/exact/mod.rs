//! Exact master-equation dynamics on the full `2^N`-dimensional space.
//!
//! The generator is applied through its action on `ρ`; no superoperator is
//! ever built. With the effective non-Hermitian Hamiltonian
//! `H_eff = Σ_ij (J_ij − iΓ_ij/2) σ_i†σ_j`,
//!
//! `dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ_ij Γ_ij σ_j ρ σ_i†`.

mod density;

use num_complex::Complex64;
use rayon::prelude::*;

pub use density::{observables_exact, shot_bits, shot_sample, DensityMatrix, ExactObservables};

use crate::complex_view::{as_complex, as_complex_mut, to_interleaved};
use crate::couplings::CouplingMatrices;
use crate::error::{Error, Result};
use crate::geometry::AtomArray;
use crate::init::InitialStateSpec;
use crate::ode::{integrate, OdeOptions, OdeStats, OdeSystem};
use crate::trace::{ObservableTrace, TimeGrid};

pub const DEFAULT_EXACT_CAP: usize = 12;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Precomputed action of the generator for one coupling configuration.
pub struct ExactGenerator {
    n: usize,
    /// `H_eff` diagonal per basis state.
    diag: Vec<Complex64>,
    /// Off-diagonal `H_eff` entries per row: `(column, value)`.
    hops: Vec<Vec<(usize, Complex64)>>,
    /// Γ flattened row-major.
    gamma: Vec<f64>,
}

impl ExactGenerator {
    pub fn new(couplings: &CouplingMatrices) -> Self {
        let n = couplings.n();
        let dim = 1usize << n;
        let a = |i: usize, j: usize| Complex64::new(couplings.j[[i, j]], -0.5 * couplings.gamma[[i, j]]);
        let diag = (0..dim)
            .map(|y| (0..n).filter(|i| y >> i & 1 == 1).map(|i| a(i, i)).sum())
            .collect();
        let hops = (0..dim)
            .map(|y| {
                let mut row = Vec::new();
                for i in (0..n).filter(|i| y >> i & 1 == 1) {
                    for j in (0..n).filter(|j| y >> j & 1 == 0) {
                        let v = a(i, j);
                        if v != Complex64::new(0.0, 0.0) {
                            row.push((y ^ (1 << i) ^ (1 << j), v));
                        }
                    }
                }
                row
            })
            .collect();
        let gamma = couplings.gamma.iter().copied().collect();
        Self { n, diag, hops, gamma }
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    /// Writes `dρ/dt` for the row-major entries `rho` into `out`.
    pub fn apply(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        let dim = 1usize << n;
        debug_assert_eq!(rho.len(), dim * dim);

        let mut x = vec![Complex64::new(0.0, 0.0); dim * dim];
        x.par_chunks_mut(dim).enumerate().for_each(|(y, xrow)| {
            let d = self.diag[y];
            for (o, r) in xrow.iter_mut().zip(&rho[y * dim..(y + 1) * dim]) {
                *o = d * r;
            }
            for &(col, v) in &self.hops[y] {
                for (o, r) in xrow.iter_mut().zip(&rho[col * dim..(col + 1) * dim]) {
                    *o += v * r;
                }
            }
        });

        out.par_chunks_mut(dim).enumerate().for_each(|(y, orow)| {
            let empty_y: Vec<usize> = (0..n).filter(|j| y >> j & 1 == 0).collect();
            for (z, o) in orow.iter_mut().enumerate() {
                let mut v = -I * x[y * dim + z] + I * x[z * dim + y].conj();
                for i in (0..n).filter(|i| z >> i & 1 == 0) {
                    let zi = z | 1 << i;
                    for &j in &empty_y {
                        let g = self.gamma[i * n + j];
                        if g != 0.0 {
                            v += g * rho[(y | 1 << j) * dim + zi];
                        }
                    }
                }
                *o = v;
            }
        });
    }
}

/// `dρ/dt` of the master equation.
pub fn lindblad_rhs(rho: &DensityMatrix, couplings: &CouplingMatrices) -> Result<DensityMatrix> {
    if couplings.n() != rho.n_atoms() {
        return Err(Error::DimensionMismatch {
            expected: rho.n_atoms(),
            found: couplings.n(),
        });
    }
    let gen = ExactGenerator::new(couplings);
    let mut out = DensityMatrix::zeros(rho.n_atoms());
    gen.apply(rho.entries(), out.entries_mut());
    Ok(out)
}

impl OdeSystem for ExactGenerator {
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.apply(as_complex(y), as_complex_mut(dy));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactOptions {
    pub ode: OdeOptions,
    /// Largest atom number accepted.
    pub cap: usize,
    /// Times at which pair-correlator snapshots are recorded.
    pub snapshot_times: Vec<f64>,
    /// Times at which the full density matrix is kept.
    pub state_times: Vec<f64>,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::new(1e-8, 1e-10),
            cap: DEFAULT_EXACT_CAP,
            snapshot_times: Vec::new(),
            state_times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExactRun {
    pub trace: ObservableTrace,
    pub states: Vec<(f64, DensityMatrix)>,
    pub final_state: DensityMatrix,
    /// Largest `|Tr ρ − 1|` seen on the output grid.
    pub max_trace_drift: f64,
    pub stats: OdeStats,
}

fn matches_any(t: f64, list: &[f64]) -> bool {
    list.iter().any(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
}

/// Integrates from an explicit initial density matrix.
pub fn evolve_density(
    rho0: DensityMatrix,
    couplings: &CouplingMatrices,
    grid: &TimeGrid,
    opts: &ExactOptions,
) -> Result<ExactRun> {
    let n = rho0.n_atoms();
    if n > opts.cap {
        return Err(Error::TooManyAtoms { atoms: n, cap: opts.cap });
    }
    if couplings.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: couplings.n(),
        });
    }
    grid.validate()?;
    let gen = ExactGenerator::new(couplings);
    let mut trace = ObservableTrace::new(n);
    let mut states = Vec::new();
    let mut drift: f64 = 0.0;
    let mut y = to_interleaved(rho0.entries());
    let stats = integrate(&gen, &mut y, &grid.times, &opts.ode, |t, y| {
        let rho = DensityMatrix::from_entries(n, as_complex(y).to_vec())?;
        drift = drift.max((rho.trace() - 1.0).norm());
        let obs = observables_exact(&rho, couplings)?;
        trace.times.push(t);
        trace.n_excited.push(obs.n_excited);
        trace.emission_rate.push(obs.emission_rate);
        trace.s_z.push(obs.s_z);
        trace.m2.push(obs.m2);
        trace.s_z_sq.push(obs.s_z_sq);
        if matches_any(t, &opts.snapshot_times) {
            trace.snapshots.push(obs.snapshot(t));
        }
        if matches_any(t, &opts.state_times) {
            states.push((t, rho));
        }
        Ok(())
    })?;
    let final_state = DensityMatrix::from_entries(n, as_complex(&y).to_vec())?;
    Ok(ExactRun {
        trace,
        states,
        final_state,
        max_trace_drift: drift,
        stats,
    })
}

/// Exact evolution of the product initial state `init` on `array`.
pub fn evolve_exact(
    init: &InitialStateSpec,
    array: &AtomArray,
    couplings: &CouplingMatrices,
    grid: &TimeGrid,
    opts: &ExactOptions,
) -> Result<ExactRun> {
    let positions = array.occupied_positions();
    if positions.len() > opts.cap {
        return Err(Error::TooManyAtoms {
            atoms: positions.len(),
            cap: opts.cap,
        });
    }
    let rho0 = DensityMatrix::from_init(init, &positions)?;
    evolve_density(rho0, couplings, grid, opts)
}
