use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::rhs::CumulantSystem;
use super::state::{CumulantState, Layout};
use super::ClosureOrder;
use crate::couplings::CouplingMatrices;
use crate::error::{Error, Result};
use crate::geometry::AtomArray;
use crate::init::InitialStateSpec;
use crate::ode::{integrate, OdeOptions, OdeStats, OdeSystem};
use crate::trace::{ObservableTrace, PairSnapshot, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantOptions {
    pub ode: OdeOptions,
    pub snapshot_times: Vec<f64>,
    /// Populations outside `[−ε, 1 + ε]` are pulled back into `[0, 1]` and logged.
    pub clamp_epsilon: f64,
    /// Populations further than this outside `[0, 1]` abort the run.
    pub abort_threshold: f64,
    /// Any tracked component larger than this in magnitude aborts the run.
    pub blowup_threshold: f64,
}

impl Default for CumulantOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::new(1e-7, 1e-10),
            snapshot_times: Vec::new(),
            clamp_epsilon: 1e-6,
            abort_threshold: 1e-3,
            blowup_threshold: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CumulantRun {
    pub trace: ObservableTrace,
    pub final_state: CumulantState,
    pub stats: OdeStats,
    /// Number of soft clamps applied to populations.
    pub clamp_events: usize,
}

struct Guarded<'a, S: ?Sized> {
    inner: &'a S,
    n: usize,
    opts: &'a CumulantOptions,
    clamps: AtomicUsize,
}

impl<S: OdeSystem + ?Sized> OdeSystem for Guarded<'_, S> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.inner.rhs(t, y, dy);
    }

    fn after_step(&self, t: f64, y: &mut [f64]) -> Result<bool> {
        if let Some((k, v)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > self.opts.blowup_threshold)
        {
            return Err(Error::Unphysical {
                time: t,
                reason: format!("tracked component {k} reached {v}"),
            });
        }
        let eps = self.opts.clamp_epsilon;
        let mut modified = false;
        for (a, v) in y[..self.n].iter_mut().enumerate() {
            let excess = if *v < 0.0 { -*v } else { *v - 1.0 };
            if excess > self.opts.abort_threshold {
                return Err(Error::Unphysical {
                    time: t,
                    reason: format!("population of atom {a} is {v}"),
                });
            }
            if excess > eps {
                log::warn!("t = {t}: population of atom {a} clamped from {v}");
                *v = v.clamp(0.0, 1.0);
                self.clamps.fetch_add(1, Ordering::Relaxed);
                modified = true;
            }
        }
        Ok(modified)
    }
}

pub(crate) struct Observables {
    pub n_excited: f64,
    pub emission_rate: f64,
    pub s_z: f64,
    pub s_z_sq: f64,
    pub m2: f64,
}

pub(crate) fn observables(layout: &Layout, y: &[f64], couplings: &CouplingMatrices) -> Observables {
    let v = layout.view(y);
    let n = layout.n;
    let nf = n as f64;
    let n_excited: f64 = v.populations().iter().sum();
    let mut emission = 0.0;
    let mut off = 0.0;
    let mut sz_sq = nf / 4.0;
    for a in 0..n {
        emission += couplings.gamma[[a, a]] * v.n(a);
        for b in (0..n).filter(|&b| b != a) {
            let c = v.c(a, b).re;
            emission += couplings.gamma[[a, b]] * c;
            off += c;
            sz_sq += v.d(a, b) - 0.5 * (v.n(a) + v.n(b)) + 0.25;
        }
    }
    Observables {
        n_excited,
        emission_rate: emission,
        s_z: n_excited - nf / 2.0,
        s_z_sq: sz_sq,
        m2: nf / 2.0 + off,
    }
}

fn snapshot(layout: &Layout, y: &[f64], time: f64) -> PairSnapshot {
    let v = layout.view(y);
    let n = layout.n;
    PairSnapshot {
        time,
        populations: v.populations().to_vec(),
        pair_populations: Array2::from_shape_fn((n, n), |(a, b)| v.d(a, b)),
        coherences: Array2::from_shape_fn((n, n), |(a, b)| v.c(a, b)),
    }
}

/// Integrates the closed equations of any right-hand side sharing `state0`'s layout.
pub fn evolve_system<S: OdeSystem + ?Sized>(
    system: &S,
    state0: CumulantState,
    couplings: &CouplingMatrices,
    grid: &TimeGrid,
    opts: &CumulantOptions,
) -> Result<CumulantRun> {
    grid.validate()?;
    let layout = state0.layout.clone();
    let n = layout.n;
    if couplings.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: couplings.n(),
        });
    }
    let guarded = Guarded {
        inner: system,
        n,
        opts,
        clamps: AtomicUsize::new(0),
    };
    let mut trace = ObservableTrace::new(n);
    let mut y = state0.data;
    let stats = integrate(&guarded, &mut y, &grid.times, &opts.ode, |t, y| {
        let o = observables(&layout, y, couplings);
        if o.emission_rate < -1e-6 * o.n_excited.max(1.0) {
            return Err(Error::Unphysical {
                time: t,
                reason: format!("negative photon flux {}", o.emission_rate),
            });
        }
        trace.times.push(t);
        trace.n_excited.push(o.n_excited);
        trace.emission_rate.push(o.emission_rate);
        trace.s_z.push(o.s_z);
        trace.m2.push(o.m2);
        trace.s_z_sq.push(o.s_z_sq);
        if opts.snapshot_times.iter().any(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0)) {
            trace.snapshots.push(snapshot(&layout, y, t));
        }
        Ok(())
    })?;
    Ok(CumulantRun {
        trace,
        final_state: CumulantState { layout, data: y },
        stats,
        clamp_events: guarded.clamps.into_inner(),
    })
}

/// Integrates from an explicit moment state.
pub fn evolve_state(
    state0: CumulantState,
    couplings: &CouplingMatrices,
    grid: &TimeGrid,
    opts: &CumulantOptions,
) -> Result<CumulantRun> {
    let system = CumulantSystem::new(couplings, state0.order())?;
    if system.layout() != &state0.layout {
        return Err(Error::DimensionMismatch {
            expected: system.layout().len(),
            found: state0.data.len(),
        });
    }
    evolve_system(&system, state0, couplings, grid, opts)
}

/// Cumulant dynamics of the product initial state `init` on `array`.
pub fn evolve_cumulant(
    init: &InitialStateSpec,
    array: &AtomArray,
    couplings: &CouplingMatrices,
    order: ClosureOrder,
    grid: &TimeGrid,
    opts: &CumulantOptions,
) -> Result<CumulantRun> {
    let state0 = CumulantState::from_init(init, &array.occupied_positions(), order)?;
    evolve_state(state0, couplings, grid, opts)
}
