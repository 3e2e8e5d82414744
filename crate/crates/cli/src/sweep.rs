//! Parameter sweeps: one run per axis value, executed concurrently and isolated
//! from each other, followed by axis-specific post-processing.

use std::fmt::Write as _;

use cooperative_decay::analysis::{resonance_deviation, DecayTrace};
use cooperative_decay::couplings::{spectrum_scan, SpectrumScanRow};
use cooperative_decay::seeds::derive_seed;
use cooperative_decay::stats::percentile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{resolve_point, ResolvedRun, SweepAxis, SweepConfig};
use crate::manifest::{Bundle, Manifest, Status};
use crate::presets::{emit_plot_data, PlotSource, Preset};
use crate::run::{execute_run, RunOutputs};

const SCALING_STREAM: u64 = 0x5ca1e;

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub value: f64,
    pub seed: u64,
    pub error: Option<String>,
    pub run: Option<RunOutputs>,
    /// Spacing axis: largest shortfall below independent decay.
    pub deviation: Option<f64>,
    /// Disorder axis: jump-spectrum statistics.
    pub spectrum: Option<Vec<SpectrumScanRow>>,
    /// Excitation-fraction axis: tail amplitude over `N_e(0)`.
    pub tail_fraction: Option<f64>,
}

/// Log–log slope with a one-sigma bootstrap interval over sweep points.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub quantity: String,
    pub exponent: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

#[derive(Clone, Debug)]
pub struct SweepOutputs {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub scaling: Vec<ScalingFit>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub outputs: SweepOutputs,
    pub bundle: Bundle,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Power-law exponent with a pairs-bootstrap interval (15.87th to 84.13th percentile).
pub fn scaling_fit(quantity: &str, x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Option<ScalingFit> {
    let exponent = log_log_slope(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut slopes: Vec<f64> = (0..resamples)
        .filter_map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            log_log_slope(&xs, &ys)
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let (lower, upper) = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (percentile(&slopes, 15.865_5), percentile(&slopes, 84.134_5))
    };
    Some(ScalingFit {
        quantity: quantity.to_string(),
        exponent,
        lower,
        upper,
        points: n,
    })
}

/// Amplitude of the late-time exponential (least squares on `ln N_e` over the
/// last three samples), extrapolated to `t = 0` and divided by `N_e(0)`.
pub fn tail_amplitude_fraction(trace: &DecayTrace) -> Option<f64> {
    let n = trace.len();
    if n < 3 || !(trace.n_excited[0] > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = (n - 3..n)
        .map(|i| (trace.times[i], trace.n_excited[i]))
        .filter(|p| p.1 > 0.0)
        .map(|(t, y)| (t, y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    Some(intercept.exp() / trace.n_excited[0])
}

fn decay_of(r: &RunOutputs) -> Option<DecayTrace> {
    DecayTrace::new(r.trace.times.clone(), r.trace.n_excited.clone(), r.trace.n_atoms).ok()
}

fn run_point(config: &SweepConfig, index: usize) -> (SweepPoint, Option<Bundle>) {
    let value = config.sweep.values[index];
    let point_config = config.point(index);
    let mut point = SweepPoint {
        index,
        value,
        seed: point_config.seed,
        error: None,
        run: None,
        deviation: None,
        spectrum: None,
        tail_fraction: None,
    };
    let resolved: ResolvedRun = match resolve_point(&point_config) {
        Ok(r) => r,
        Err(e) => {
            point.error = Some(format!("config: {e}"));
            return (point, None);
        }
    };
    let axis = config.sweep.axis;
    let mut bundle = None;
    if axis != SweepAxis::DisorderSigma || config.sweep.run_dynamics {
        let result = execute_run(&resolved);
        if result.bundle.manifest.status == Status::Failed {
            point.error = Some(format!("solver: {}", result.bundle.manifest.failures.join("; ")));
        }
        point.run = result.outputs;
        bundle = Some(result.bundle);
    }
    let errors = |point: &mut SweepPoint, what: &str, e: String| {
        point.error.get_or_insert_with(|| format!("{what}: {e}"));
    };
    match axis {
        SweepAxis::Spacing => {
            if let Some(d) = point.run.as_ref().and_then(decay_of) {
                match resonance_deviation(&d, 1.0) {
                    Ok(v) => point.deviation = Some(v),
                    Err(e) => errors(&mut point, "resonance deviation", e.to_string()),
                }
            }
        }
        SweepAxis::ExcitationFraction => {
            point.tail_fraction = point.run.as_ref().and_then(decay_of).as_ref().and_then(tail_amplitude_fraction);
        }
        SweepAxis::DisorderSigma => {
            let e = &resolved.ensemble;
            let spacings = config
                .sweep
                .spectrum_spacings
                .clone()
                .unwrap_or_else(|| vec![e.lattice.spacing]);
            match spectrum_scan(
                &e.lattice,
                &spacings,
                &e.disorder,
                &e.drive,
                config.sweep.spectrum_realizations,
                point.seed,
            ) {
                Ok(rows) => point.spectrum = Some(rows),
                Err(err) => errors(&mut point, "spectrum scan", err.to_string()),
            }
        }
        SweepAxis::AtomNumber => {}
    }
    (point, bundle)
}

fn opt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => v.to_string(),
        _ => "NaN".into(),
    }
}

fn sweep_table(out: &SweepOutputs) -> String {
    let mut s = format!("# sweep v1\n# axis = {}\n", out.axis.name());
    s.push_str("index,value,seed,status,n_atoms,peak_gamma,t_peak,peak_emission_per_atom,peak_total_emission,gamma0,tail_rate,final_fraction,tail_amplitude_fraction,resonance_deviation,variance_median,brightest_median\n");
    for p in &out.points {
        let m = p.run.as_ref().map(|r| &r.summary);
        let status = if p.error.is_some() { "failed" } else { "ok" };
        let first = p.spectrum.as_ref().and_then(|r| r.first());
        let final_fraction = p
            .run
            .as_ref()
            .map(|r| r.summary.final_n_excited / r.trace.n_excited[0]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.index,
            p.value,
            p.seed,
            status,
            m.map_or("NaN".into(), |m| m.n_atoms.to_string()),
            opt(m.map(|m| m.peak_gamma)),
            opt(m.map(|m| m.t_peak)),
            opt(m.map(|m| m.peak_emission_per_atom)),
            opt(m.map(|m| m.peak_total_emission)),
            opt(m.map(|m| m.gamma0)),
            opt(m.and_then(|m| m.tail_rate)),
            opt(final_fraction),
            opt(p.tail_fraction),
            opt(p.deviation),
            opt(first.map(|r| r.variance_median)),
            opt(first.map(|r| r.brightest_median)),
        );
    }
    s
}

fn spectrum_table(rows: &[SpectrumScanRow]) -> String {
    let mut s = String::from("# spectrum-scan v1\nspacing,variance_p25,variance_median,variance_p75,brightest_p25,brightest_median,brightest_p75\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.spacing, r.variance_p25, r.variance_median, r.variance_p75, r.brightest_p25, r.brightest_median, r.brightest_p75
        );
    }
    s
}

pub fn execute_sweep(config: &SweepConfig) -> SweepResult {
    let config_text = config.to_toml();
    let mut bundle = Bundle::new(Manifest::new("sweep", &config_text, config.base.seed));
    bundle.add("config.toml", config_text);

    let results: Vec<(SweepPoint, Option<Bundle>)> = (0..config.sweep.values.len())
        .into_par_iter()
        .map(|i| run_point(config, i))
        .collect();

    let mut points = Vec::with_capacity(results.len());
    for (point, point_bundle) in results {
        let dir = format!("point_{:03}", point.index);
        bundle.manifest.seeds.push((dir.clone(), point.seed));
        if let Some(b) = &point_bundle {
            bundle.nest(&dir, b);
        }
        if let Some(rows) = &point.spectrum {
            bundle.add(format!("{dir}/spectrum.csv"), spectrum_table(rows));
        }
        if let Some(e) = &point.error {
            bundle
                .manifest
                .failures
                .push(format!("point {} ({} = {}): {e}", point.index, config.sweep.axis.name(), point.value));
        }
        points.push(point);
    }

    let mut scaling = Vec::new();
    if config.sweep.axis == SweepAxis::AtomNumber {
        let ok: Vec<&RunOutputs> = points.iter().filter(|p| p.error.is_none()).filter_map(|p| p.run.as_ref()).collect();
        if ok.len() < 4 {
            bundle
                .manifest
                .notes
                .push(format!("scaling exponent needs at least 4 successful points, have {}", ok.len()));
        } else {
            let n: Vec<f64> = ok.iter().map(|r| r.summary.n_atoms as f64).collect();
            let quantities: [(&str, fn(&RunOutputs) -> f64); 3] = [
                ("peak_total_emission", |r| r.summary.peak_total_emission),
                ("peak_gamma", |r| r.summary.peak_gamma),
                ("peak_emission_per_atom", |r| r.summary.peak_emission_per_atom),
            ];
            for (k, (name, f)) in quantities.iter().enumerate() {
                let y: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                let seed = derive_seed(config.base.seed, SCALING_STREAM + k as u64);
                match scaling_fit(name, &n, &y, config.sweep.exponent_bootstrap, seed) {
                    Some(fit) => scaling.push(fit),
                    None => bundle.manifest.notes.push(format!("scaling exponent of {name}: degenerate data")),
                }
            }
        }
    }

    let outputs = SweepOutputs {
        axis: config.sweep.axis,
        points,
        scaling,
    };
    bundle.add("sweep.csv", sweep_table(&outputs));
    let mut summary = format!("# sweep-summary v1\naxis = {}\n", outputs.axis.name());
    for f in &outputs.scaling {
        let _ = writeln!(
            summary,
            "exponent {} = {} [{}, {}] over {} points",
            f.quantity, f.exponent, f.lower, f.upper, f.points
        );
    }
    bundle.add("summary.txt", summary);

    let preset = match outputs.axis {
        SweepAxis::AtomNumber => Some(Preset::Scaling),
        SweepAxis::Spacing => Some(Preset::Spacing),
        SweepAxis::ExcitationFraction => Some(Preset::SpinSsz),
        SweepAxis::DisorderSigma => None,
    };
    if let Some(p) = preset {
        match emit_plot_data(PlotSource::Sweep(&outputs), p) {
            Ok(files) => {
                for (name, c) in files {
                    bundle.add(format!("plots/{name}"), c);
                }
            }
            Err(e) => bundle.manifest.notes.push(e.to_string()),
        }
    }
    if !bundle.manifest.failures.is_empty() {
        let any_ok = outputs.points.iter().any(|p| p.error.is_none());
        bundle.manifest.status = if any_ok { Status::Partial } else { Status::Failed };
    }
    SweepResult { outputs, bundle }
}
