//! The verbs behind the binary, callable without a process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cooperative_decay::analysis::{
    bootstrap_fit, fit_stretched, resonance_deviation, subradiant_tail, DecayTrace, FitConstraints, TailWindow,
};
use cooperative_decay::trace::ObservableTrace;

use crate::config::{load_run, RunConfig, ScanConfig, SweepConfig};
use crate::manifest::{diff_bundles, verify_dir, Bundle, Manifest, Status};
use crate::run::execute_run;
use crate::scan::execute_scan;
use crate::sweep::execute_sweep;
use crate::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn output_dir(flag: Option<&Path>, config: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.cloned())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))
}

/// Writes the bundle and turns a non-ok status into a solver error, after the
/// partial outputs are safely on disk.
fn finish(bundle: &Bundle, dir: &Path) -> Result<String, CliError> {
    bundle
        .write(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let m = &bundle.manifest;
    let mut msg = format!("{} {}: {} files in {}\n", m.kind, m.status.as_str(), bundle.files.len() + 1, dir.display());
    for n in &m.notes {
        let _ = writeln!(msg, "note: {n}");
    }
    match m.status {
        Status::Ok => Ok(msg),
        _ => Err(CliError::Solver(format!("{msg}{}", m.failures.join("\n")))),
    }
}

pub fn run(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<String, CliError> {
    let source = read(config_path)?;
    let mut config = RunConfig::from_toml(&source).map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let dir = output_dir(out, config.output_dir.as_ref())?;
    let resolved = config
        .resolve()
        .map_err(|e| CliError::Config(format!("{}: {}", config_path.display(), e.locate(&source))))?;
    finish(&execute_run(&resolved).bundle, &dir)
}

pub fn sweep(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<String, CliError> {
    let source = read(config_path)?;
    let mut config =
        SweepConfig::from_toml(&source).map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.base.seed = s;
    }
    let dir = output_dir(out, config.output_dir.as_ref())?;
    finish(&execute_sweep(&config).bundle, &dir)
}

pub fn spectrum_scan(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<String, CliError> {
    let source = read(config_path)?;
    let mut config =
        ScanConfig::from_toml(&source).map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let dir = output_dir(out, config.output_dir.as_ref())?;
    finish(&execute_scan(&config).bundle, &dir)
}

/// Re-executes the persisted config of a bundle in memory.
pub fn rerun_bundle(kind: &str, config_text: &str) -> Result<Bundle, CliError> {
    let cfg = |e: crate::config::ConfigError| CliError::Config(format!("persisted config: {e}"));
    Ok(match kind {
        "run" => execute_run(&load_run(config_text).map_err(cfg)?.1).bundle,
        "sweep" => execute_sweep(&SweepConfig::from_toml(config_text).map_err(cfg)?).bundle,
        "spectrum-scan" => execute_scan(&ScanConfig::from_toml(config_text).map_err(cfg)?).bundle,
        other => return Err(CliError::Config(format!("unknown bundle kind {other:?}"))),
    })
}

/// Checks every hash in the manifest; with `rerun`, also re-executes the
/// persisted config and compares the regenerated files byte for byte.
pub fn verify(dir: &Path, rerun: bool) -> Result<String, CliError> {
    let (manifest, v) = verify_dir(dir).map_err(CliError::Io)?;
    let mut report = v.report();
    let mut ok = v.passed();
    if rerun {
        let text = read(&dir.join("config.toml"))?;
        let fresh: Manifest = rerun_bundle(&manifest.kind, &text)?.finalized_manifest();
        let diff = diff_bundles(&manifest, &fresh);
        let _ = writeln!(report, "rerun compared {} files", fresh.files.len());
        for p in &diff {
            let _ = writeln!(report, "rerun differs: {p}");
        }
        ok &= diff.is_empty() && fresh.status == manifest.status;
    }
    if ok {
        Ok(format!("{report}verify passed\n"))
    } else {
        Err(CliError::Verification(format!("{report}verify FAILED")))
    }
}

#[derive(Clone, Debug)]
pub struct FitArgs {
    pub terms: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub window: Option<f64>,
    pub penalty: Option<f64>,
    pub tail: TailWindow,
    pub deviation: bool,
}

impl Default for FitArgs {
    fn default() -> Self {
        Self {
            terms: 3,
            bootstrap: 0,
            seed: 0,
            window: None,
            penalty: None,
            tail: TailWindow::Linear,
            deviation: false,
        }
    }
}

/// Offline analysis of a trace file written by `run`.
pub fn fit(trace_path: &Path, args: &FitArgs) -> Result<String, CliError> {
    let text = read(trace_path)?;
    let trace = ObservableTrace::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", trace_path.display())))?;
    let decay = DecayTrace::new(trace.times, trace.n_excited, trace.n_atoms)
        .map_err(|e| CliError::Config(format!("{}: {e}", trace_path.display())))?;
    if !(1..=3).contains(&args.terms) {
        return Err(CliError::Config("--terms must be 1, 2 or 3".into()));
    }
    let constraints = FitConstraints {
        derivative_penalty: args.penalty,
        window: args.window,
        tau0: 1.0,
    };
    let report = if args.bootstrap > 0 {
        bootstrap_fit(&decay, args.terms, &constraints, args.bootstrap, args.seed)
    } else {
        fit_stretched(&decay, args.terms, &constraints)
    }
    .map_err(|e| CliError::Solver(e.to_string()))?;
    let mut out = report.to_text();
    match subradiant_tail(&decay, args.tail) {
        Ok(r) => {
            let _ = writeln!(out, "tail_rate = {r}");
        }
        Err(e) => {
            let _ = writeln!(out, "tail_rate = NaN ({e})");
        }
    }
    if args.deviation {
        let d = resonance_deviation(&decay, 1.0).map_err(|e| CliError::Solver(e.to_string()))?;
        let _ = writeln!(out, "resonance_deviation = {d}");
    }
    Ok(out)
}
