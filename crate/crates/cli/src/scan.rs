//! Jump-spectrum scans over lattice spacing and disorder strength, and the
//! resonance read-out built on them.

use std::fmt::Write as _;

use cooperative_decay::couplings::{spectrum_scan, SpectrumScanRow};
use cooperative_decay::geometry::DisorderSpec;

use crate::config::ScanConfig;
use crate::manifest::{Bundle, Manifest, Status};
use crate::presets::{emit_plot_data, PlotSource, Preset};

#[derive(Clone, Debug)]
pub struct ScanOutputs {
    /// `(sigma, rows)` in the configured order of `sigmas`.
    pub curves: Vec<(f64, Vec<SpectrumScanRow>)>,
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    pub outputs: Option<ScanOutputs>,
    pub bundle: Bundle,
}

/// Indices of strict interior local maxima.
pub fn local_maxima(y: &[f64]) -> Vec<usize> {
    (1..y.len().saturating_sub(1)).filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1]).collect()
}

/// Indices of strict interior local minima.
pub fn local_minima(y: &[f64]) -> Vec<usize> {
    (1..y.len().saturating_sub(1)).filter(|&i| y[i] < y[i - 1] && y[i] < y[i + 1]).collect()
}

/// One geometric resonance read off the ordered curve, tracked across disorder.
#[derive(Clone, Debug, PartialEq)]
pub struct Resonance {
    /// Spacing of the variance maximum of the ordered curve.
    pub peak: f64,
    /// Spacing of the variance minimum just below it.
    pub dip: f64,
    /// Spacing of the nearest maximum of the ordered brightest-rate curve.
    pub bright_peak: f64,
    /// Median `Var(Γ_k)` at `peak` minus at `dip`, one entry per sigma.
    pub contrast: Vec<f64>,
    /// Median brightest rate at `bright_peak`, one entry per sigma.
    pub brightest: Vec<f64>,
}

/// Resonances of the first curve (normally `sigma = 0`), each followed through
/// the remaining curves at fixed spacings. All curves must share spacings.
pub fn resonances(curves: &[(f64, Vec<SpectrumScanRow>)]) -> Vec<Resonance> {
    let Some((_, ordered)) = curves.first() else {
        return Vec::new();
    };
    let spacing: Vec<f64> = ordered.iter().map(|r| r.spacing).collect();
    let var: Vec<f64> = ordered.iter().map(|r| r.variance_median).collect();
    let bright: Vec<f64> = ordered.iter().map(|r| r.brightest_median).collect();
    let minima = local_minima(&var);
    let bright_max = local_maxima(&bright);
    local_maxima(&var)
        .into_iter()
        .filter_map(|p| {
            let dip = minima.iter().copied().filter(|&m| m < p).max()?;
            let b = bright_max
                .iter()
                .copied()
                .min_by(|&a, &c| (spacing[a] - spacing[p]).abs().total_cmp(&(spacing[c] - spacing[p]).abs()))
                .unwrap_or(p);
            Some(Resonance {
                peak: spacing[p],
                dip: spacing[dip],
                bright_peak: spacing[b],
                contrast: curves.iter().map(|(_, rows)| rows[p].variance_median - rows[dip].variance_median).collect(),
                brightest: curves.iter().map(|(_, rows)| rows[b].brightest_median).collect(),
            })
        })
        .collect()
}

fn resonance_text(sigmas: &[f64], res: &[Resonance]) -> String {
    let mut s = String::from("# resonances v1\n");
    let _ = writeln!(
        s,
        "sigmas = {}",
        sigmas.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    );
    for r in res {
        let _ = writeln!(s, "peak = {}, dip = {}, bright_peak = {}", r.peak, r.dip, r.bright_peak);
        let _ = writeln!(
            s,
            "  contrast = {}",
            r.contrast.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "  brightest = {}",
            r.brightest.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        );
    }
    s
}

/// Every sigma reuses the master seed, so occupancy draws and displacement
/// directions are shared and only their scale changes between curves.
pub fn execute_scan(config: &ScanConfig) -> ScanResult {
    let text = config.to_toml();
    let mut bundle = Bundle::new(Manifest::new("spectrum-scan", &text, config.seed));
    bundle.add("config.toml", text);
    let lattice = config.lattice_spec();
    let drive = config.drive_geometry();
    let spacings = config.scan.spacings();
    let mut curves = Vec::new();
    for &sigma in &config.scan.sigmas {
        let disorder = DisorderSpec {
            sigma,
            seed: config.seed,
            in_plane_only: config.scan.in_plane_only,
        };
        match spectrum_scan(&lattice, &spacings, &disorder, &drive, config.realizations, config.seed) {
            Ok(rows) => curves.push((sigma, rows)),
            Err(e) => bundle.manifest.failures.push(format!("sigma {sigma}: {e}")),
        }
    }
    if curves.is_empty() {
        bundle.manifest.status = Status::Failed;
        return ScanResult { outputs: None, bundle };
    }
    if !bundle.manifest.failures.is_empty() {
        bundle.manifest.status = Status::Partial;
    }
    for (sigma, rows) in &curves {
        let mut s = format!("# spectrum-scan v1\n# sigma = {sigma}\n");
        s.push_str("spacing,variance_p25,variance_median,variance_p75,brightest_p25,brightest_median,brightest_p75\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.spacing, r.variance_p25, r.variance_median, r.variance_p75, r.brightest_p25, r.brightest_median, r.brightest_p75
            );
        }
        bundle.add(format!("spectrum_sigma{sigma}.csv"), s);
    }
    let sigmas: Vec<f64> = curves.iter().map(|c| c.0).collect();
    bundle.add("resonances.txt", resonance_text(&sigmas, &resonances(&curves)));
    let outputs = ScanOutputs { curves };
    match emit_plot_data(PlotSource::Scan(&outputs), Preset::Spacing) {
        Ok(files) => {
            for (name, c) in files {
                bundle.add(format!("plots/{name}"), c);
            }
        }
        Err(e) => bundle.manifest.notes.push(e.to_string()),
    }
    ScanResult {
        outputs: Some(outputs),
        bundle,
    }
}
