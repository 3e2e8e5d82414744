//! Plot-ready columnar files. Presets are named after phenomena; rendering is
//! left to external tools.

use std::fmt::{self, Write as _};

use cooperative_decay::analysis::{analytic_independent_spin, CorrelationMap};
use serde::{Deserialize, Serialize};

use crate::config::SweepAxis;
use crate::run::RunOutputs;
use crate::scan::ScanOutputs;
use crate::sweep::SweepOutputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `N_e(t)` with its standard error.
    Decay,
    /// Normalized decay rate `γ(t)`.
    Rate,
    /// Connected-correlation heatmaps.
    Correlations,
    /// Peak emission against atom number.
    Scaling,
    /// Resonance indicators against lattice spacing.
    Spacing,
    /// `(S_z/N, S_tot/N)` with the independent-decay reference.
    SpinSsz,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Decay,
        Preset::Rate,
        Preset::Correlations,
        Preset::Scaling,
        Preset::Spacing,
        Preset::SpinSsz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Decay => "decay",
            Preset::Rate => "rate",
            Preset::Correlations => "correlations",
            Preset::Scaling => "scaling",
            Preset::Spacing => "spacing",
            Preset::SpinSsz => "spin_ssz",
        }
    }

    pub fn applies_to_run(self) -> bool {
        !matches!(self, Preset::Scaling | Preset::Spacing)
    }
}

/// Outputs a preset can be drawn from.
#[derive(Clone, Copy)]
pub enum PlotSource<'a> {
    Run(&'a RunOutputs),
    Sweep(&'a SweepOutputs),
    Scan(&'a ScanOutputs),
}

/// The prerequisite outputs a preset could not find.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingOutputs {
    pub preset: Preset,
    pub missing: Vec<String>,
}

impl fmt::Display for MissingOutputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "preset {} is missing: {}", self.preset.name(), self.missing.join(", "))
    }
}

impl std::error::Error for MissingOutputs {}

fn missing(preset: Preset, what: &[&str]) -> MissingOutputs {
    MissingOutputs {
        preset,
        missing: what.iter().map(|s| s.to_string()).collect(),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        "NaN".into()
    }
}

/// Files as `(name, contents)`; names are relative to the bundle's `plots/`.
pub fn emit_plot_data(source: PlotSource<'_>, preset: Preset) -> Result<Vec<(String, String)>, MissingOutputs> {
    match (preset, source) {
        (Preset::Decay, PlotSource::Run(r)) => Ok(vec![("decay.csv".into(), decay(r))]),
        (Preset::Rate, PlotSource::Run(r)) => Ok(vec![("rate.csv".into(), rate(r))]),
        (Preset::Correlations, PlotSource::Run(r)) => {
            if r.correlations.is_empty() {
                return Err(missing(preset, &["correlation snapshots (analysis.snapshot_times)"]));
            }
            let mut files = Vec::new();
            for c in &r.correlations {
                files.push((format!("correlations_moments_t{}.csv", c.time), heatmap(&c.moments, c.time)));
                if let Some(s) = &c.shots {
                    files.push((format!("correlations_shots_t{}.csv", c.time), heatmap(s, c.time)));
                }
            }
            Ok(files)
        }
        (Preset::SpinSsz, PlotSource::Run(r)) => match &r.spin {
            Some(_) => Ok(vec![("spin_ssz.csv".into(), spin_ssz(&[(r.excitation_fraction, r)]))]),
            None => Err(missing(preset, &["spin trajectory (S_z, M2, S_z_sq columns)"])),
        },
        (Preset::SpinSsz, PlotSource::Sweep(s)) => {
            if s.axis != SweepAxis::ExcitationFraction {
                return Err(missing(preset, &["an excitation_fraction sweep"]));
            }
            let runs: Vec<(f64, &RunOutputs)> = s
                .points
                .iter()
                .filter_map(|p| p.run.as_ref().filter(|r| r.spin.is_some()).map(|r| (p.value, r)))
                .collect();
            if runs.is_empty() {
                return Err(missing(preset, &["spin trajectories of successful points"]));
            }
            Ok(vec![("spin_ssz.csv".into(), spin_ssz(&runs))])
        }
        (Preset::Scaling, PlotSource::Sweep(s)) => {
            if s.axis != SweepAxis::AtomNumber {
                return Err(missing(preset, &["an atom_number sweep"]));
            }
            Ok(vec![("scaling.csv".into(), scaling(s))])
        }
        (Preset::Spacing, PlotSource::Sweep(s)) => {
            if s.axis != SweepAxis::Spacing {
                return Err(missing(preset, &["a spacing sweep"]));
            }
            let mut out = String::from("# plot spacing v1\n# x = lattice spacing / lambda\n# y = max deviation below independent decay\n");
            out.push_str("spacing,resonance_deviation\n");
            for p in &s.points {
                let _ = writeln!(out, "{},{}", p.value, num(p.deviation.unwrap_or(f64::NAN)));
            }
            Ok(vec![("spacing.csv".into(), out)])
        }
        (Preset::Spacing, PlotSource::Scan(s)) => {
            let mut out = String::from(
                "# plot spacing v1\n# x = lattice spacing / lambda\n# y = jump-rate variance and brightest rate (gamma0 units)\n",
            );
            out.push_str("sigma,spacing,variance_p25,variance_median,variance_p75,brightest_p25,brightest_median,brightest_p75\n");
            for (sigma, rows) in &s.curves {
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{sigma},{},{},{},{},{},{},{}",
                        r.spacing, r.variance_p25, r.variance_median, r.variance_p75, r.brightest_p25, r.brightest_median, r.brightest_p75
                    );
                }
            }
            Ok(vec![("spacing.csv".into(), out)])
        }
        (p, PlotSource::Run(_)) => Err(missing(p, &["a sweep or spectrum scan"])),
        (p, PlotSource::Sweep(_)) => Err(missing(p, &["a single run"])),
        (p, PlotSource::Scan(_)) => Err(missing(p, &["a sweep or single run"])),
    }
}

fn decay(r: &RunOutputs) -> String {
    let t = &r.trace;
    let mut out = String::from("# plot decay v1\n");
    let _ = writeln!(out, "# n_atoms = {}", t.n_atoms);
    let _ = writeln!(out, "# tau_us = {}", r.units.lifetime_us);
    out.push_str("t_over_tau,t_us,N_e,N_e_stderr\n");
    for i in 0..t.len() {
        let se = t.stderr.as_ref().map_or(f64::NAN, |e| e.n_excited[i]);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.times[i],
            t.times[i] * r.units.lifetime_us,
            t.n_excited[i],
            num(se)
        );
    }
    out
}

fn rate(r: &RunOutputs) -> String {
    let t = &r.trace;
    let gamma = t.gamma_normalized();
    let mut out = String::from("# plot rate v1\n# y = gamma(t) / gamma0\n");
    out.push_str("t_over_tau,gamma,gamma_stderr,gamma_fit,gamma_discrete\n");
    for i in 0..t.len() {
        let se = t.stderr.as_ref().map_or(f64::NAN, |e| e.gamma_normalized[i]);
        let fit = r.fit_rate.as_ref().map_or(f64::NAN, |f| f[i]);
        // Discrete estimates live on interval midpoints; listed on the interval start.
        let disc = r.rates.as_ref().and_then(|v| v.get(i)).map_or(f64::NAN, |e| e.rate);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.times[i],
            num(gamma[i]),
            num(se),
            num(fit),
            num(disc)
        );
    }
    out
}

/// Row-major grid: the first column is `d_row`, the header lists `d_col`.
fn heatmap(map: &CorrelationMap, time: f64) -> String {
    let (rows, cols, vals) = map.to_grid();
    let mut out = String::from("# plot correlations v1\n");
    let _ = writeln!(out, "# t_over_tau = {time}");
    let _ = writeln!(out, "# label = {}", map.label().unwrap_or("none"));
    out.push_str("d_row\\d_col");
    for c in &cols {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(out, "{r}");
        for j in 0..cols.len() {
            let _ = write!(out, ",{}", num(vals[i * cols.len() + j]));
        }
        out.push('\n');
    }
    out
}

/// `(S_z/N, S_tot/N)` for each run, plus the independent-decay curve for a
/// rotation with the same excitation fraction at `T = e^{−t/τ}`.
fn spin_ssz(runs: &[(f64, &RunOutputs)]) -> String {
    let mut out = String::from("# plot spin_ssz v1\n# reference = independent decay after a rotation with sin^2(theta) = excitation_fraction\n");
    out.push_str("excitation_fraction,t_over_tau,S_z_per_N,S_tot_per_N,ref_S_z_per_N,ref_S_tot_per_N\n");
    for (fraction, r) in runs {
        let s = r.spin.as_ref().expect("filtered");
        let n = s.n_atoms.max(1);
        let nf = n as f64;
        let theta = fraction.clamp(0.0, 1.0).sqrt().asin();
        for i in 0..s.times.len() {
            let (rz, rs2) = analytic_independent_spin(theta, n, (-s.times[i]).exp());
            let _ = writeln!(
                out,
                "{fraction},{},{},{},{},{}",
                s.times[i],
                num(s.s_z[i] / nf),
                num(s.s_tot[i] / nf),
                rz / nf,
                rs2.max(0.0).sqrt() / nf
            );
        }
    }
    out
}

fn scaling(s: &SweepOutputs) -> String {
    let mut out = String::from("# plot scaling v1\n# x = atom number\n");
    for f in &s.scaling {
        let _ = writeln!(
            out,
            "# exponent {} = {} (1-sigma bootstrap [{}, {}])",
            f.quantity,
            f.exponent,
            num(f.lower),
            num(f.upper)
        );
    }
    out.push_str("N,peak_gamma,peak_emission_per_atom,peak_total_emission\n");
    for p in &s.points {
        if let Some(r) = &p.run {
            let m = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{}",
                m.n_atoms, m.peak_gamma, m.peak_emission_per_atom, m.peak_total_emission
            );
        }
    }
    out
}
