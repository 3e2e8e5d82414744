use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evolve::{evolve_cumulant, CumulantOptions};
use super::ClosureOrder;
use crate::couplings::{coupling_matrices, MotionSpec};
use crate::error::{Error, Result};
use crate::geometry::{build_array, AtomArray, DisorderSpec, DriveGeometry, LatticeSpec};
use crate::init::InitialStateSpec;
use crate::seeds::derive_seed;
use crate::stats::{mean, standard_error};
use crate::trace::{ObservableTrace, TimeGrid, TraceErrors};

const MAX_RESAMPLES: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub lattice: LatticeSpec,
    pub disorder: DisorderSpec,
    pub drive: DriveGeometry,
    pub motion: Option<MotionSpec>,
    pub init: InitialStateSpec,
    pub order: ClosureOrder,
    pub grid: TimeGrid,
    pub options: CumulantOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationInfo {
    pub index: usize,
    pub seed: u64,
    pub n_atoms: usize,
    pub clamp_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    /// Mean over successful realizations, with per-time standard errors.
    pub mean: ObservableTrace,
    pub traces: Vec<ObservableTrace>,
    pub realizations: Vec<RealizationInfo>,
    pub failures: Vec<RealizationFailure>,
}

/// Seed used for realization `index` of an ensemble.
pub fn realization_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, index as u64)
}

/// Loads the array of one realization, redrawing empty loadings.
pub fn realization_array(config: &EnsembleConfig, seed: u64) -> Result<(AtomArray, u64)> {
    let mut attempt = 0;
    loop {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        match build_array(&config.lattice, &config.disorder, &config.drive, s) {
            Ok(a) => return Ok((a, s)),
            Err(Error::EmptyRealization { .. }) if attempt < MAX_RESAMPLES => attempt += 1,
            Err(e) => return Err(e),
        }
    }
}

fn run_one(config: &EnsembleConfig, seed: u64) -> Result<(ObservableTrace, RealizationInfo)> {
    let (array, used) = realization_array(config, seed)?;
    let motion = config.motion.clone().map(|m| MotionSpec {
        seed: derive_seed(used, 0x6d6f_7469_6f6e),
        ..m
    });
    let couplings = coupling_matrices(&array, motion.as_ref())?;
    let run = evolve_cumulant(&config.init, &array, &couplings, config.order, &config.grid, &config.options)?;
    Ok((
        run.trace,
        RealizationInfo {
            index: 0,
            seed: used,
            n_atoms: array.n_atoms(),
            clamp_events: run.clamp_events,
        },
    ))
}

/// Averages `realizations` independent loadings (occupancy, disorder, motional bands).
///
/// Realizations run concurrently; the reduction walks them in index order so the
/// result depends only on `master_seed`. Failed realizations are reported in
/// `failures` and left out of the mean.
pub fn ensemble_run(config: &EnsembleConfig, realizations: usize, master_seed: u64) -> Result<EnsembleResult> {
    if realizations == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one realization".into()));
    }
    config.order.validate()?;
    config.grid.validate()?;
    let outcomes: Vec<(usize, u64, Result<(ObservableTrace, RealizationInfo)>)> = (0..realizations)
        .into_par_iter()
        .map(|index| {
            let seed = realization_seed(master_seed, index);
            (index, seed, run_one(config, seed))
        })
        .collect();

    let mut traces = Vec::new();
    let mut infos = Vec::new();
    let mut failures = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok((trace, mut info)) => {
                info.index = index;
                traces.push(trace);
                infos.push(info);
            }
            Err(e) => {
                log::error!("realization {index} (seed {seed}) failed: {e}");
                failures.push(RealizationFailure {
                    index,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if traces.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "all {realizations} realizations failed; first error: {}",
            failures[0].error
        )));
    }
    Ok(EnsembleResult {
        mean: average(&traces),
        traces,
        realizations: infos,
        failures,
    })
}

/// Pointwise mean and standard error of traces sharing a time grid.
pub fn average(traces: &[ObservableTrace]) -> ObservableTrace {
    let len = traces[0].len();
    let column = |f: &dyn Fn(&ObservableTrace) -> &Vec<f64>, i: usize| -> Vec<f64> { traces.iter().map(|t| f(t)[i]).collect() };
    let gammas: Vec<Vec<f64>> = traces.iter().map(|t| t.gamma_normalized()).collect();
    let mut out = ObservableTrace::new(
        (traces.iter().map(|t| t.n_atoms as f64).sum::<f64>() / traces.len() as f64).round() as usize,
    );
    out.times = traces[0].times.clone();
    let mut err = TraceErrors::default();
    for i in 0..len {
        let ne = column(&|t| &t.n_excited, i);
        let em = column(&|t| &t.emission_rate, i);
        let sz = column(&|t| &t.s_z, i);
        let m2 = column(&|t| &t.m2, i);
        let szz = column(&|t| &t.s_z_sq, i);
        let g: Vec<f64> = gammas.iter().map(|g| g[i]).filter(|g| g.is_finite()).collect();
        out.n_excited.push(mean(&ne));
        out.emission_rate.push(mean(&em));
        out.s_z.push(mean(&sz));
        out.m2.push(mean(&m2));
        out.s_z_sq.push(mean(&szz));
        err.n_excited.push(standard_error(&ne));
        err.emission_rate.push(standard_error(&em));
        err.gamma_normalized.push(if g.is_empty() { f64::NAN } else { standard_error(&g) });
        err.s_z.push(standard_error(&sz));
        err.m2.push(standard_error(&m2));
    }
    out.stderr = Some(err);
    out
}
