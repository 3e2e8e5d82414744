//! Single runs: ensemble dynamics, then rates, fits, correlation maps and spin
//! trajectories, all gathered into one [`Bundle`].

use std::fmt::Write as _;

use cooperative_decay::analysis::{
    bootstrap_fit, connected_correlations, connected_correlations_from_shots, discrete_rates, fit_stretched,
    normalized_rate_from_fit, spin_trajectory, subradiant_tail, CorrelationMap, DecayTrace, FitConstraints, FitReport,
    RateEstimate, Region, SpinTrajectory,
};
use cooperative_decay::couplings::{coupling_matrices, MotionSpec};
use cooperative_decay::cumulant::{average, ensemble_run, evolve_cumulant, realization_array, realization_seed};
use cooperative_decay::exact::{evolve_exact, shot_bits, shot_sample, ExactOptions};
use cooperative_decay::geometry::{dicke_array, AtomArray};
use cooperative_decay::seeds::derive_seed;
use cooperative_decay::trace::{ObservableTrace, PairSnapshot};
use rayon::prelude::*;

use crate::config::{ResolvedRun, Solver, Units};
use crate::manifest::{Bundle, Manifest, Status};
use crate::presets::{emit_plot_data, PlotSource};

/// Same label the library's ensemble runner uses for the motional stream.
const MOTION_STREAM: u64 = 0x6d6f_7469_6f6e;
const FIT_STREAM: u64 = 0x0f17;
const SHOT_STREAM: u64 = 0x5407;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSnapshot {
    pub time: f64,
    pub moments: CorrelationMap,
    pub shots: Option<CorrelationMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub n_atoms: usize,
    pub realizations: usize,
    /// Largest `γ(t) = flux/N_e` and when it occurs.
    pub peak_gamma: f64,
    pub t_peak: f64,
    pub peak_emission_per_atom: f64,
    /// `max_t(−dN_e/dt)`.
    pub peak_total_emission: f64,
    pub gamma0: f64,
    pub tail_rate: Option<f64>,
    pub final_n_excited: f64,
    pub clamp_events: usize,
    pub max_trace_drift: Option<f64>,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("NaN".to_string(), |v| v.to_string());
        let mut out = String::from("# run-summary v1\n");
        let _ = writeln!(out, "n_atoms = {}", self.n_atoms);
        let _ = writeln!(out, "realizations = {}", self.realizations);
        let _ = writeln!(out, "peak_gamma = {}", self.peak_gamma);
        let _ = writeln!(out, "t_peak = {}", self.t_peak);
        let _ = writeln!(out, "peak_emission_per_atom = {}", self.peak_emission_per_atom);
        let _ = writeln!(out, "peak_total_emission = {}", self.peak_total_emission);
        let _ = writeln!(out, "gamma0 = {}", self.gamma0);
        let _ = writeln!(out, "tail_rate = {}", opt(self.tail_rate));
        let _ = writeln!(out, "final_n_excited = {}", self.final_n_excited);
        let _ = writeln!(out, "clamp_events = {}", self.clamp_events);
        let _ = writeln!(out, "max_trace_drift = {}", opt(self.max_trace_drift));
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub trace: ObservableTrace,
    pub summary: RunSummary,
    pub rates: Option<Vec<RateEstimate>>,
    pub fit: Option<FitReport>,
    /// Fitted `γ(t)` on the trace times, when the fit succeeded.
    pub fit_rate: Option<Vec<f64>>,
    pub correlations: Vec<CorrelationSnapshot>,
    pub spin: Option<SpinTrajectory>,
    pub excitation_fraction: f64,
    pub units: Units,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outputs: Option<RunOutputs>,
    pub bundle: Bundle,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.bundle.manifest.status != Status::Ok
    }
}

struct Realization {
    index: usize,
    seed: u64,
    array: AtomArray,
    trace: ObservableTrace,
    clamp_events: usize,
    drift: Option<f64>,
    /// Shot-path correlation maps, one per snapshot time.
    shot_maps: Vec<CorrelationMap>,
}

fn motion_for(motion: &Option<MotionSpec>, seed: u64) -> Option<MotionSpec> {
    motion.clone().map(|m| MotionSpec {
        seed: derive_seed(seed, MOTION_STREAM),
        ..m
    })
}

fn run_exact(run: &ResolvedRun, opts: &ExactOptions, index: usize) -> Result<Realization, String> {
    let cfg = &run.ensemble;
    let (array, seed) = if run.colocated {
        (dicke_array(cfg.lattice.sites(), &cfg.drive).map_err(|e| e.to_string())?, run.seed)
    } else {
        realization_array(cfg, realization_seed(run.seed, index)).map_err(|e| e.to_string())?
    };
    let couplings = coupling_matrices(&array, motion_for(&cfg.motion, seed).as_ref()).map_err(|e| e.to_string())?;
    let out = evolve_exact(&cfg.init, &array, &couplings, &cfg.grid, opts).map_err(|e| e.to_string())?;
    let mut shot_maps = Vec::new();
    if run.analysis.shots > 0 {
        let sites = array.occupied_sites();
        let n = sites.len();
        for (k, (t, rho)) in out.states.iter().enumerate() {
            let shots = shot_sample(rho, run.analysis.shots, derive_seed(seed, SHOT_STREAM + k as u64))
                .map_err(|e| format!("shots at t = {t}: {e}"))?;
            let bits: Vec<Vec<bool>> = shots.iter().map(|&s| shot_bits(s, n)).collect();
            shot_maps.push(
                connected_correlations_from_shots(&sites, &bits, &run.analysis.region())
                    .map_err(|e| format!("shot correlations at t = {t}: {e}"))?,
            );
        }
    }
    Ok(Realization {
        index,
        seed,
        array,
        trace: out.trace,
        clamp_events: 0,
        drift: Some(out.max_trace_drift),
        shot_maps,
    })
}

fn solve(run: &ResolvedRun) -> (Vec<Realization>, Vec<String>) {
    let cfg = &run.ensemble;
    match &run.solver {
        Solver::Exact(opts) => {
            let outcomes: Vec<Result<Realization, String>> = (0..run.realizations)
                .into_par_iter()
                .map(|i| run_exact(run, opts, i))
                .collect();
            let mut ok = Vec::new();
            let mut failures = Vec::new();
            for (i, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(r) => ok.push(r),
                    Err(e) => failures.push(format!("realization {i} (seed {}): {e}", realization_seed(run.seed, i))),
                }
            }
            (ok, failures)
        }
        Solver::Cumulant(opts) if run.colocated => {
            let single = dicke_array(cfg.lattice.sites(), &cfg.drive)
                .and_then(|array| {
                    let couplings = coupling_matrices(&array, motion_for(&cfg.motion, run.seed).as_ref())?;
                    let out = evolve_cumulant(&cfg.init, &array, &couplings, cfg.order, &cfg.grid, opts)?;
                    Ok(Realization {
                        index: 0,
                        seed: run.seed,
                        array,
                        trace: out.trace,
                        clamp_events: out.clamp_events,
                        drift: None,
                        shot_maps: Vec::new(),
                    })
                })
                .map_err(|e| format!("realization 0 (seed {}): {e}", run.seed));
            match single {
                Ok(r) => (vec![r], Vec::new()),
                Err(e) => (Vec::new(), vec![e]),
            }
        }
        Solver::Cumulant(_) => match ensemble_run(cfg, run.realizations, run.seed) {
            Err(e) => (Vec::new(), vec![e.to_string()]),
            Ok(result) => {
                let failures = result
                    .failures
                    .iter()
                    .map(|f| format!("realization {} (seed {}): {}", f.index, f.seed, f.error))
                    .collect();
                let ok = result
                    .traces
                    .into_iter()
                    .zip(result.realizations)
                    .map(|(trace, info)| Realization {
                        index: info.index,
                        seed: info.seed,
                        array: realization_array(cfg, info.seed).expect("array rebuilt from a used seed").0,
                        trace,
                        clamp_events: info.clamp_events,
                        drift: None,
                        shot_maps: Vec::new(),
                    })
                    .collect();
                (ok, failures)
            }
        },
    }
}

/// Pools per-realization maps, weighting each displacement by its pair count.
pub fn pool_maps(maps: &[CorrelationMap]) -> CorrelationMap {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<[i64; 2], (f64, usize, f64, bool)> = BTreeMap::new();
    for m in maps {
        for k in 0..m.displacements.len() {
            let e = acc.entry(m.displacements[k]).or_insert((0.0, 0, 0.0, true));
            let w = m.pair_counts[k] as f64;
            e.0 += w * m.c_d[k];
            e.1 += m.pair_counts[k];
            match m.stderr.as_ref() {
                Some(s) => e.2 += (w * s[k]).powi(2),
                None => e.3 = false,
            }
        }
    }
    let with_err = !maps.is_empty() && maps.iter().all(|m| m.stderr.is_some());
    let mut out = CorrelationMap {
        displacements: Vec::new(),
        c_d: Vec::new(),
        pair_counts: Vec::new(),
        stderr: with_err.then(Vec::new),
    };
    for (d, (sum, count, var, _)) in acc {
        out.displacements.push(d);
        out.c_d.push(sum / count as f64);
        out.pair_counts.push(count);
        if let Some(s) = out.stderr.as_mut() {
            s.push(var.sqrt() / count as f64);
        }
    }
    out
}

fn moment_map(array: &AtomArray, snap: &PairSnapshot, region: &Region) -> Result<CorrelationMap, String> {
    connected_correlations(&array.occupied_sites(), &snap.populations, &snap.pair_populations, region)
        .map_err(|e| format!("correlations at t = {}: {e}", snap.time))
}

/// Excitation fraction of the initial state, used for the analytic spin reference.
fn initial_fraction(run: &ResolvedRun) -> f64 {
    run.ensemble.init.population()
}

fn realizations_table(reals: &[Realization]) -> String {
    let mut out = String::from("# realizations v1\nindex,seed,n_atoms,clamp_events\n");
    for r in reals {
        let _ = writeln!(out, "{},{},{},{}", r.index, r.seed, r.array.n_atoms(), r.clamp_events);
    }
    out
}

fn rates_table(rates: &[RateEstimate]) -> String {
    let mut out = String::from("# discrete-rates v1\n# time_unit = tau\nt_mid,rate,rising\n");
    for r in rates {
        let _ = writeln!(out, "{},{},{}", r.time, r.rate, u8::from(r.rising));
    }
    out
}

fn spin_table(s: &SpinTrajectory) -> String {
    let mut out = format!("# spin-trajectory v1\n# n_atoms = {}\nt,S_z,M2,S_tot\n", s.n_atoms);
    for i in 0..s.times.len() {
        let _ = writeln!(out, "{},{},{},{}", s.times[i], s.s_z[i], s.m2[i], s.s_tot[i]);
    }
    out
}

fn time_label(t: f64) -> String {
    format!("t{t}")
}

/// Runs the configured dynamics and analysis. Never panics on solver or
/// analysis failure: problems land in the manifest and whatever was computed
/// is kept.
pub fn execute_run(run: &ResolvedRun) -> RunResult {
    let config_text = run.config.to_toml();
    let mut bundle = Bundle::new(Manifest::new("run", &config_text, run.seed));
    bundle.add("config.toml", config_text);

    let (reals, failures) = solve(run);
    bundle.manifest.failures = failures;
    for r in &reals {
        bundle.manifest.seeds.push((format!("realization_{:04}", r.index), r.seed));
        bundle.add(format!("arrays/realization_{:04}.txt", r.index), r.array.to_table());
    }
    if reals.is_empty() {
        bundle.manifest.status = Status::Failed;
        return RunResult { outputs: None, bundle };
    }
    if !bundle.manifest.failures.is_empty() {
        bundle.manifest.status = Status::Partial;
    }
    bundle.add("realizations.csv", realizations_table(&reals));

    let traces: Vec<ObservableTrace> = reals.iter().map(|r| r.trace.clone()).collect();
    let mean = average(&traces);
    bundle.add("trace.csv", mean.to_csv());
    let notes = &mut bundle.manifest.notes;

    let decay = DecayTrace::new(mean.times.clone(), mean.n_excited.clone(), mean.n_atoms);
    let decay = match decay {
        Ok(d) => Some(d),
        Err(e) => {
            notes.push(format!("decay trace unusable: {e}"));
            None
        }
    };
    let rates = decay.as_ref().and_then(|d| match discrete_rates(d) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("discrete rates: {e}"));
            None
        }
    });
    let a = &run.analysis;
    let mut fit = None;
    if a.fit_terms > 0 {
        if let Some(d) = &decay {
            let constraints = FitConstraints {
                derivative_penalty: a.derivative_penalty,
                window: a.fit_window,
                tau0: 1.0,
            };
            let report = if a.bootstrap > 0 {
                bootstrap_fit(d, a.fit_terms, &constraints, a.bootstrap, derive_seed(run.seed, FIT_STREAM))
            } else {
                fit_stretched(d, a.fit_terms, &constraints)
            };
            match report {
                Ok(r) => fit = Some(r),
                Err(e) => notes.push(format!("fit: {e}")),
            }
        }
    }
    let fit_rate = match (&fit, &decay) {
        (Some(f), Some(d)) => normalized_rate_from_fit(d, &f.model).ok(),
        _ => None,
    };
    let tail_rate = decay.as_ref().and_then(|d| match subradiant_tail(d, a.tail_window) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("tail rate: {e}"));
            None
        }
    });

    let mut correlations = Vec::new();
    let region = a.region();
    let mut snapshot_times = a.snapshot_times.clone();
    snapshot_times.sort_by(f64::total_cmp);
    snapshot_times.dedup();
    for (k, &t) in snapshot_times.iter().enumerate() {
        let maps: Result<Vec<CorrelationMap>, String> = reals
            .iter()
            .map(|r| {
                let s = r.trace.snapshot_at(t).ok_or_else(|| format!("no snapshot at t = {t}"))?;
                moment_map(&r.array, s, &region)
            })
            .collect();
        match maps {
            Ok(maps) => correlations.push(CorrelationSnapshot {
                time: t,
                moments: pool_maps(&maps),
                shots: (a.shots > 0)
                    .then(|| pool_maps(&reals.iter().map(|r| r.shot_maps[k].clone()).collect::<Vec<_>>())),
            }),
            Err(e) => notes.push(e),
        }
    }
    let spin = match spin_trajectory(&mean) {
        Ok(s) => Some(s),
        Err(e) => {
            notes.push(format!("spin trajectory: {e}"));
            None
        }
    };

    let (peak_gamma, t_peak) = mean.peak_gamma();
    let summary = RunSummary {
        n_atoms: mean.n_atoms,
        realizations: reals.len(),
        peak_gamma,
        t_peak,
        peak_emission_per_atom: mean.peak_emission_per_atom(),
        peak_total_emission: mean.emission_rate.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        gamma0: mean.gamma_normalized()[0],
        tail_rate,
        final_n_excited: *mean.n_excited.last().unwrap(),
        clamp_events: reals.iter().map(|r| r.clamp_events).sum(),
        max_trace_drift: reals.iter().filter_map(|r| r.drift).reduce(f64::max),
    };

    bundle.add("summary.txt", summary.to_text());
    if let Some(r) = &rates {
        bundle.add("rates.csv", rates_table(r));
    }
    if let Some(f) = &fit {
        bundle.add("fit.txt", f.to_text());
    }
    for c in &correlations {
        bundle.add(format!("correlations/moments_{}.csv", time_label(c.time)), c.moments.to_csv());
        if let Some(s) = &c.shots {
            bundle.add(format!("correlations/shots_{}.csv", time_label(c.time)), s.to_csv());
        }
    }
    if let Some(s) = &spin {
        bundle.add("spin.csv", spin_table(s));
    }

    let outputs = RunOutputs {
        trace: mean,
        summary,
        rates,
        fit,
        fit_rate,
        correlations,
        spin,
        excitation_fraction: initial_fraction(run),
        units: run.units.clone(),
    };
    for &preset in &run.presets {
        match emit_plot_data(PlotSource::Run(&outputs), preset) {
            Ok(files) => {
                for (p, c) in files {
                    bundle.add(format!("plots/{p}"), c);
                }
            }
            Err(e) => bundle.manifest.notes.push(e.to_string()),
        }
    }
    RunResult {
        outputs: Some(outputs),
        bundle,
    }
}
