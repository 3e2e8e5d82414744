//! Run, sweep and scan configuration files.
//!
//! Configs are TOML with a mandatory `schema_version`. Lengths may be given in
//! wavelengths (`spacing`, `sigma`, `widths`) or in nanometres (`*_nm`), times
//! in lifetimes (`t_end`) or microseconds (`t_end_us`); physical values are
//! converted once, in [`RunConfig::resolve`], using the `[units]` table.

use std::fmt;
use std::path::PathBuf;

use cooperative_decay::analysis::{Region, TailWindow};
use cooperative_decay::couplings::MotionSpec;
use cooperative_decay::cumulant::{ClosureOrder, CumulantOptions, EnsembleConfig};
use cooperative_decay::exact::ExactOptions;
use cooperative_decay::geometry::{DisorderSpec, DriveGeometry, LatticeSpec, Polarization, Vec3};
use cooperative_decay::init::InitialStateSpec;
use cooperative_decay::ode::OdeOptions;
use cooperative_decay::seeds::derive_seed;
use cooperative_decay::trace::TimeGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::presets::Preset;

pub const SCHEMA_VERSION: u32 = 1;

/// Stream label for the disorder seed, kept apart from the occupancy stream.
const DISORDER_STREAM: u64 = 0xd150_0de5;

/// A config problem, located by its dotted key path and, when the source text
/// is known, by line.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub path: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: Some(path.into()),
            line: None,
            message: message.into(),
        }
    }

    /// Fills in the line number of `path` in `source`.
    pub fn locate(mut self, source: &str) -> Self {
        if self.line.is_none() {
            if let Some(path) = &self.path {
                self.line = find_key_line(source, path);
            }
        }
        self
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        self.path = Some(match self.path {
            Some(p) => format!("{prefix}.{p}"),
            None => prefix.to_string(),
        });
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.path) {
            (Some(l), Some(p)) => write!(f, "line {l}: {p}: {}", self.message),
            (None, Some(p)) => write!(f, "{p}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of a dotted key such as `lattice.spacing`. A table path matches
/// its header line.
pub fn find_key_line(source: &str, path: &str) -> Option<usize> {
    let mut table = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == path {
                return Some(i + 1);
            }
        } else if let Some((key, _)) = line.split_once('=') {
            let key = key.trim().trim_matches('"');
            let full = if table.is_empty() { key.to_string() } else { format!("{table}.{key}") };
            if full == path {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Parses a config, checking the schema version before the shape.
pub fn parse_versioned<T: DeserializeOwned>(source: &str) -> Result<T, ConfigError> {
    let table: toml::Table = toml::from_str(source).map_err(|e| toml_error(source, &e))?;
    match table.get("schema_version") {
        None => return Err(ConfigError::new("missing schema_version")),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(
                ConfigError::at("schema_version", format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"))
                    .locate(source),
            )
        }
    }
    toml::from_str(source).map_err(|e| toml_error(source, &e))
}

fn toml_error(source: &str, e: &toml::de::Error) -> ConfigError {
    let line = e.span().map(|s| source[..s.start.min(source.len())].lines().count().max(1));
    ConfigError {
        path: None,
        line,
        message: e.message().trim().to_string(),
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    #[serde(default = "default_lifetime")]
    pub lifetime_us: f64,
}

fn default_wavelength() -> f64 {
    841.0
}

fn default_lifetime() -> f64 {
    20.0
}

impl Default for Units {
    fn default() -> Self {
        Self {
            wavelength_nm: default_wavelength(),
            lifetime_us: default_lifetime(),
        }
    }
}

impl Units {
    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return Err(ConfigError::at("units.wavelength_nm", "must be positive"));
        }
        if !(self.lifetime_us > 0.0 && self.lifetime_us.is_finite()) {
            return Err(ConfigError::at("units.lifetime_us", "must be positive"));
        }
        Ok(())
    }
}

/// A length given either in wavelengths or in nanometres, but not both.
fn length(units: &Units, path: &str, lambda: Option<f64>, nm: Option<f64>) -> Result<Option<f64>, ConfigError> {
    match (lambda, nm) {
        (Some(_), Some(_)) => Err(ConfigError::at(path, format!("give {path} or {path}_nm, not both"))),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(v)) => Ok(Some(v / units.wavelength_nm)),
        (None, None) => Ok(None),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    #[default]
    Square,
    /// All atoms at one point; `rows × cols` sets the atom number.
    Colocated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default)]
    pub geometry: GeometryKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_nm: Option<f64>,
    #[serde(default = "one_f")]
    pub fill_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_number_target: Option<usize>,
}

impl LatticeConfig {
    fn resolve(&self, units: &Units, need_spacing: bool) -> Result<LatticeSpec, ConfigError> {
        let spacing = length(units, "lattice.spacing", self.spacing, self.spacing_nm)?;
        let spacing = match (spacing, need_spacing && self.geometry == GeometryKind::Square) {
            (Some(a), _) => a,
            (None, false) => 1.0,
            (None, true) => return Err(ConfigError::at("lattice", "missing spacing (or spacing_nm)")),
        };
        let mut spec = LatticeSpec::square(self.rows, self.cols, spacing).with_fill(self.fill_probability);
        spec.atom_number_target = self.atom_number_target;
        spec.validate().map_err(|e| ConfigError::at("lattice", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_nm: Option<f64>,
    #[serde(default)]
    pub in_plane_only: bool,
}

impl DisorderConfig {
    fn resolve(&self, units: &Units, seed: u64) -> Result<DisorderSpec, ConfigError> {
        let sigma = length(units, "disorder.sigma", self.sigma, self.sigma_nm)?.unwrap_or(0.0);
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ConfigError::at("disorder.sigma", "must be non-negative"));
        }
        Ok(DisorderSpec {
            sigma,
            seed: derive_seed(seed, DISORDER_STREAM),
            in_plane_only: self.in_plane_only,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_axis: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_direction: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarization: Option<Polarization>,
}

impl DriveConfig {
    fn resolve(&self) -> Result<DriveGeometry, ConfigError> {
        let d = DriveGeometry::default();
        DriveGeometry::new(
            self.quantization_axis.unwrap_or(d.quantization_axis),
            self.beam_direction.unwrap_or(d.beam_direction),
            self.polarization.unwrap_or(d.polarization),
        )
        .map_err(|e| ConfigError::at("drive", e.to_string()))
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths_nm: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excited_band_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl MotionConfig {
    fn resolve(&self, units: &Units) -> Result<Option<MotionSpec>, ConfigError> {
        if !self.enabled {
            return Ok(None);
        }
        let d = MotionSpec::default();
        let widths = match (self.widths, self.widths_nm) {
            (Some(_), Some(_)) => return Err(ConfigError::at("motion.widths", "give widths or widths_nm, not both")),
            (Some(w), None) => w,
            (None, Some(w)) => w.map(|x| x / units.wavelength_nm),
            (None, None) => d.widths,
        };
        let spec = MotionSpec {
            widths,
            excited_band_probability: self.excited_band_probability.unwrap_or(d.excited_band_probability),
            samples: self.samples.unwrap_or(d.samples),
            seed: 0,
        };
        spec.validate().map_err(|e| ConfigError::at("motion", e.to_string()))?;
        Ok(Some(spec))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Inverted,
    /// Each atom excited with probability `excitation_fraction`, no coherences.
    Incoherent,
    /// Coherent rotation leaving `excitation_fraction` excited.
    Coherent,
}

/// `"beam"` (along the drive beam, |k| = 2π/λ), `"none"`, or an explicit vector
/// in units of 2π/λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseGradientConfig {
    Keyword(String),
    Vector(Vec3),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default)]
    pub kind: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_gradient: Option<PhaseGradientConfig>,
}

impl InitConfig {
    fn resolve(&self, drive: &DriveGeometry) -> Result<InitialStateSpec, ConfigError> {
        let p = self.excitation_fraction;
        if let Some(p) = p {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::at("init.excitation_fraction", format!("{p} outside [0, 1]")));
            }
        }
        let spec = match self.kind {
            InitKind::Inverted => {
                if p.is_some_and(|p| p != 1.0) {
                    return Err(ConfigError::at(
                        "init.excitation_fraction",
                        "an inverted start has fraction 1; use kind = \"incoherent\"",
                    ));
                }
                InitialStateSpec::fully_inverted()
            }
            InitKind::Incoherent => InitialStateSpec::incoherent(
                p.ok_or_else(|| ConfigError::at("init", "missing excitation_fraction"))?,
            ),
            InitKind::Coherent => {
                let p = p.ok_or_else(|| ConfigError::at("init", "missing excitation_fraction"))?;
                let gradient = match &self.phase_gradient {
                    None => Some(drive.beam_direction),
                    Some(PhaseGradientConfig::Keyword(k)) if k == "beam" => Some(drive.beam_direction),
                    Some(PhaseGradientConfig::Keyword(k)) if k == "none" => None,
                    Some(PhaseGradientConfig::Keyword(k)) => {
                        return Err(ConfigError::at(
                            "init.phase_gradient",
                            format!("unknown keyword {k:?}, expected \"beam\", \"none\" or a vector"),
                        ))
                    }
                    Some(PhaseGradientConfig::Vector(v)) => Some(*v),
                };
                InitialStateSpec::coherent_fraction(p, gradient)
            }
        };
        if self.kind != InitKind::Coherent && self.phase_gradient.is_some() {
            return Err(ConfigError::at("init.phase_gradient", "only meaningful for kind = \"coherent\""));
        }
        spec.validate().map_err(|e| ConfigError::at("init", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Cumulant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<u8>,
    /// Defaults to true exactly when the initial state is coherent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherent_sector: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    /// Largest atom number accepted by the exact solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

/// Solver settings after defaults are applied.
#[derive(Clone, Debug, PartialEq)]
pub enum Solver {
    Exact(ExactOptions),
    Cumulant(CumulantOptions),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    /// Dense on [0, 5τ], logarithmic out to 20τ.
    Standard,
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end_us: Option<f64>,
        intervals: usize,
    },
    UniformThenLog {
        t_uniform: f64,
        dt: f64,
        t_end: f64,
        log_points: usize,
    },
    Explicit {
        times: Vec<f64>,
    },
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::Standard
    }
}

impl GridConfig {
    fn resolve(&self, units: &Units) -> Result<TimeGrid, ConfigError> {
        let grid = match self {
            GridConfig::Standard => TimeGrid::standard(),
            GridConfig::Uniform {
                t_end,
                t_end_us,
                intervals,
            } => {
                let t_end = match (t_end, t_end_us) {
                    (Some(_), Some(_)) => return Err(ConfigError::at("grid.t_end", "give t_end or t_end_us, not both")),
                    (Some(t), None) => *t,
                    (None, Some(t)) => t / units.lifetime_us,
                    (None, None) => return Err(ConfigError::at("grid", "missing t_end (or t_end_us)")),
                };
                if !(t_end > 0.0) || *intervals == 0 {
                    return Err(ConfigError::at("grid", "need t_end > 0 and intervals >= 1"));
                }
                TimeGrid::uniform(t_end, *intervals)
            }
            GridConfig::UniformThenLog {
                t_uniform,
                dt,
                t_end,
                log_points,
            } => {
                if !(*t_uniform > 0.0 && *dt > 0.0 && *dt <= *t_uniform && *t_end >= *t_uniform) {
                    return Err(ConfigError::at("grid", "need 0 < dt <= t_uniform <= t_end"));
                }
                TimeGrid::uniform_then_log(*t_uniform, *dt, *t_end, *log_points)
            }
            GridConfig::Explicit { times } => TimeGrid { times: times.clone() },
        };
        grid.validate().map_err(|e| ConfigError::at("grid", e.to_string()))?;
        if grid.times[0] != 0.0 {
            return Err(ConfigError::at("grid", "time grid must start at t = 0"));
        }
        Ok(grid)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    #[default]
    Central,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Stretched-exponential terms to fit; 0 disables the fit.
    #[serde(default = "default_fit_terms")]
    pub fit_terms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative_penalty: Option<f64>,
    /// Bootstrap resamples for the fit band; 0 disables it.
    #[serde(default)]
    pub bootstrap: usize,
    /// Times at which correlation maps are formed; added to the time grid.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Projective shots per snapshot (exact solver only).
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub region: RegionKind,
    #[serde(default = "default_region_fraction")]
    pub region_fraction: f64,
    #[serde(default = "default_tail_window")]
    pub tail_window: TailWindow,
}

fn default_fit_terms() -> usize {
    3
}

fn default_region_fraction() -> f64 {
    0.5
}

fn default_tail_window() -> TailWindow {
    TailWindow::Linear
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fit_terms: default_fit_terms(),
            fit_window: None,
            derivative_penalty: None,
            bootstrap: 0,
            snapshot_times: Vec::new(),
            shots: 0,
            region: RegionKind::Central,
            region_fraction: default_region_fraction(),
            tail_window: default_tail_window(),
        }
    }
}

impl AnalysisConfig {
    pub fn region(&self) -> Region {
        match self.region {
            RegionKind::All => Region::All,
            RegionKind::Central => Region::Central(self.region_fraction),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.fit_terms > 3 {
            return Err(ConfigError::at("analysis.fit_terms", "at most 3 terms"));
        }
        if !(self.region_fraction > 0.0 && self.region_fraction <= 1.0) {
            return Err(ConfigError::at("analysis.region_fraction", "must lie in (0, 1]"));
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            return Err(ConfigError::at("analysis.snapshot_times", "times must be non-negative"));
        }
        if let Some(w) = self.fit_window {
            if !(w > 0.0) {
                return Err(ConfigError::at("analysis.fit_window", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Plot-data presets to emit; defaults to every preset a single run supports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presets: Option<Vec<Preset>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub realizations: usize,
    /// Where `run` writes its bundle unless overridden on the command line.
    /// Not part of the persisted copy, so bundles can be moved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub units: Units,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub disorder: DisorderConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionConfig>,
    #[serde(default)]
    pub init: InitConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A validated run with every physical quantity in λ and τ.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    /// Canonical form of the config, without `output_dir`.
    pub config: RunConfig,
    pub ensemble: EnsembleConfig,
    pub solver: Solver,
    pub colocated: bool,
    pub realizations: usize,
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub presets: Vec<Preset>,
    pub units: Units,
}

impl RunConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        parse_versioned(source)
    }

    /// Canonical TOML: the persisted form hashed into manifests.
    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        toml::to_string(&c).expect("run config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedRun, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::at("schema_version", "unsupported schema version"));
        }
        self.units.validate()?;
        if self.realizations == 0 {
            return Err(ConfigError::at("realizations", "must be at least 1"));
        }
        let lattice = self.lattice.resolve(&self.units, true)?;
        let colocated = self.lattice.geometry == GeometryKind::Colocated;
        if colocated && self.realizations != 1 {
            return Err(ConfigError::at("realizations", "co-located atoms have a single configuration"));
        }
        let disorder = self.disorder.resolve(&self.units, self.seed)?;
        if colocated && disorder.sigma > 0.0 {
            return Err(ConfigError::at("disorder.sigma", "co-located atoms take no disorder"));
        }
        let drive = self.drive.resolve()?;
        let motion = match &self.motion {
            Some(m) => m.resolve(&self.units)?,
            None => None,
        };
        let init = self.init.resolve(&drive)?;
        self.analysis.validate()?;

        let mut grid = self.grid.resolve(&self.units)?;
        let mut snapshots = self.analysis.snapshot_times.clone();
        snapshots.sort_by(f64::total_cmp);
        snapshots.dedup();
        if let Some(t) = snapshots.iter().find(|t| **t > *grid.times.last().unwrap()) {
            return Err(ConfigError::at("analysis.snapshot_times", format!("{t} lies beyond the time grid")));
        }
        for &t in &snapshots {
            if grid.index_of(t).is_none() {
                grid.times.push(t);
            }
        }
        grid.times.sort_by(f64::total_cmp);

        let s = &self.solver;
        let coherent_sector = s.coherent_sector.unwrap_or(init.coherent);
        if init.coherent && !coherent_sector {
            return Err(ConfigError::at("solver.coherent_sector", "a coherent initial state needs the coherent sector"));
        }
        let (solver, order) = match s.kind {
            SolverKind::Exact => {
                if s.alpha.is_some() {
                    return Err(ConfigError::at("solver.alpha", "the exact solver takes no closure order"));
                }
                let d = ExactOptions::default();
                let opts = ExactOptions {
                    ode: OdeOptions::new(s.rtol.unwrap_or(d.ode.rtol), s.atol.unwrap_or(d.ode.atol)),
                    cap: s.cap.unwrap_or(d.cap),
                    snapshot_times: snapshots.clone(),
                    state_times: if self.analysis.shots > 0 { snapshots.clone() } else { Vec::new() },
                };
                let atoms = if colocated { lattice.sites() } else { lattice.atom_number_target.unwrap_or(lattice.sites()) };
                if lattice.fill_probability == 1.0 && atoms > opts.cap {
                    return Err(ConfigError::at(
                        "solver.kind",
                        format!("{atoms} atoms exceed the exact-solver cap of {}", opts.cap),
                    ));
                }
                (Solver::Exact(opts), ClosureOrder::new(1, coherent_sector).expect("order 1 is valid"))
            }
            SolverKind::Cumulant => {
                if s.cap.is_some() {
                    return Err(ConfigError::at("solver.cap", "only the exact solver has an atom cap"));
                }
                let alpha = s.alpha.ok_or_else(|| ConfigError::at("solver", "cumulant solver needs alpha"))?;
                let order =
                    ClosureOrder::new(alpha, coherent_sector).map_err(|e| ConfigError::at("solver.alpha", e.to_string()))?;
                let d = CumulantOptions::default();
                let opts = CumulantOptions {
                    ode: OdeOptions::new(s.rtol.unwrap_or(d.ode.rtol), s.atol.unwrap_or(d.ode.atol)),
                    snapshot_times: snapshots.clone(),
                    ..d
                };
                (Solver::Cumulant(opts), order)
            }
        };
        if self.analysis.shots > 0 && s.kind != SolverKind::Exact {
            return Err(ConfigError::at("analysis.shots", "shot sampling needs the exact solver"));
        }
        let options = match &solver {
            Solver::Cumulant(o) => o.clone(),
            Solver::Exact(_) => CumulantOptions::default(),
        };

        let presets = match &self.output.presets {
            Some(p) => p.clone(),
            None => {
                let mut p = vec![Preset::Decay, Preset::Rate, Preset::SpinSsz];
                if !snapshots.is_empty() {
                    p.push(Preset::Correlations);
                }
                p
            }
        };
        if presets.contains(&Preset::Correlations) && snapshots.is_empty() {
            return Err(ConfigError::at(
                "output.presets",
                "the correlations preset needs analysis.snapshot_times",
            ));
        }
        for p in &presets {
            if !p.applies_to_run() {
                return Err(ConfigError::at(
                    "output.presets",
                    format!("preset {} needs a sweep or scan, not a single run", p.name()),
                ));
            }
        }

        let mut config = self.clone();
        config.output_dir = None;
        Ok(ResolvedRun {
            config,
            ensemble: EnsembleConfig {
                lattice,
                disorder,
                drive,
                motion,
                init,
                order,
                grid,
                options,
            },
            solver,
            colocated,
            realizations: self.realizations,
            seed: self.seed,
            analysis: self.analysis.clone(),
            presets,
            units: self.units.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AtomNumber,
    Spacing,
    DisorderSigma,
    ExcitationFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AtomNumber => "atom_number",
            SweepAxis::Spacing => "spacing",
            SweepAxis::DisorderSigma => "disorder_sigma",
            SweepAxis::ExcitationFraction => "excitation_fraction",
        }
    }
}

/// How each sweep point's master seed follows from the base seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every point reuses the base seed.
    Shared,
    /// `derive_seed(base, index)`.
    PerIndex,
    /// `derive_seed(base, value bits)`: a point's seed does not depend on which
    /// other values are in the sweep.
    #[default]
    PerValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    /// Bootstrap resamples for the scaling-exponent interval.
    #[serde(default = "default_exponent_bootstrap")]
    pub exponent_bootstrap: usize,
    /// Spacings scanned at every disorder point (defaults to the base spacing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_spacings: Option<Vec<f64>>,
    /// Realizations of the spectrum scan at every disorder point.
    #[serde(default = "default_scan_realizations")]
    pub spectrum_realizations: usize,
    /// Also integrate the dynamics at each disorder point.
    #[serde(default = "yes")]
    pub run_dynamics: bool,
}

fn default_exponent_bootstrap() -> usize {
    1000
}

fn default_scan_realizations() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub sweep: SweepSpec,
    pub base: RunConfig,
}

impl SweepConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        let c: Self = parse_versioned(source)?;
        c.validate().map_err(|e| e.locate(source))?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.base.output_dir = None;
        toml::to_string(&c).expect("sweep config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = &self.sweep.values;
        if v.is_empty() {
            return Err(ConfigError::at("sweep.values", "needs at least one value"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::at("sweep.values", "values must be finite"));
        }
        let up = v.windows(2).all(|w| w[1] > w[0]);
        let down = v.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(ConfigError::at("sweep.values", "values must be strictly monotone"));
        }
        if self.sweep.axis == SweepAxis::AtomNumber && v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
            return Err(ConfigError::at("sweep.values", "atom numbers must be positive integers"));
        }
        if self.sweep.spectrum_realizations == 0 {
            return Err(ConfigError::at("sweep.spectrum_realizations", "must be at least 1"));
        }
        Ok(())
    }

    pub fn point_seed(&self, index: usize, value: f64) -> u64 {
        match self.sweep.seed_policy {
            SeedPolicy::Shared => self.base.seed,
            SeedPolicy::PerIndex => derive_seed(self.base.seed, index as u64),
            SeedPolicy::PerValue => derive_seed(self.base.seed, value.to_bits()),
        }
    }

    /// The run config of sweep point `index`. Resolution errors of the point are
    /// left to the caller, so one bad value cannot sink the whole sweep.
    pub fn point(&self, index: usize) -> RunConfig {
        let value = self.sweep.values[index];
        let mut c = self.base.clone();
        c.output_dir = None;
        c.seed = self.point_seed(index, value);
        match self.sweep.axis {
            SweepAxis::AtomNumber => {
                let n = value as usize;
                let (rows, cols) = if c.lattice.geometry == GeometryKind::Colocated {
                    (1, n)
                } else {
                    near_square(n)
                };
                c.lattice.rows = rows;
                c.lattice.cols = cols;
                c.lattice.atom_number_target = None;
            }
            SweepAxis::Spacing => {
                c.lattice.spacing = Some(value);
                c.lattice.spacing_nm = None;
            }
            SweepAxis::DisorderSigma => {
                c.disorder.sigma = Some(value);
                c.disorder.sigma_nm = None;
            }
            SweepAxis::ExcitationFraction => {
                if c.init.kind == InitKind::Inverted {
                    c.init.kind = InitKind::Incoherent;
                }
                c.init.excitation_fraction = Some(value);
            }
        }
        c
    }
}

/// `rows × cols = n` with `rows ≤ cols` as close as possible.
pub fn near_square(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt().floor() as usize;
    while r > 1 && n % r != 0 {
        r -= 1;
    }
    let r = r.max(1);
    (r, n / r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub spacing_start: f64,
    pub spacing_stop: f64,
    pub spacing_step: f64,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub in_plane_only: bool,
}

fn default_sigmas() -> Vec<f64> {
    vec![0.0]
}

impl ScanSpec {
    /// Grid `start, start + step, …` up to `stop` inclusive, each value rounded
    /// to 1e-9 so that decimal steps land on their nominal values.
    pub fn spacings(&self) -> Vec<f64> {
        let n = ((self.spacing_stop - self.spacing_start) / self.spacing_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.spacing_start + i as f64 * self.spacing_step) * 1e9).round() / 1e9)
            .collect()
    }
}

/// Jump-spectrum statistics across spacings and disorder strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scan_realizations")]
    pub realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub units: Units,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    pub scan: ScanSpec,
}

impl ScanConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        let c: Self = parse_versioned(source)?;
        c.validate().map_err(|e| e.locate(source))?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        toml::to_string(&c).expect("scan config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.units.validate()?;
        self.lattice.resolve(&self.units, false)?;
        self.drive.resolve()?;
        if self.lattice.geometry != GeometryKind::Square {
            return Err(ConfigError::at("lattice.geometry", "spectrum scans need a square lattice"));
        }
        let s = &self.scan;
        if !(s.spacing_step > 0.0 && s.spacing_start > 0.0 && s.spacing_stop >= s.spacing_start) {
            return Err(ConfigError::at("scan", "need 0 < spacing_start <= spacing_stop and spacing_step > 0"));
        }
        if s.sigmas.is_empty() || s.sigmas.iter().any(|x| !(*x >= 0.0)) {
            return Err(ConfigError::at("scan.sigmas", "need at least one non-negative sigma"));
        }
        if self.realizations == 0 {
            return Err(ConfigError::at("realizations", "must be at least 1"));
        }
        Ok(())
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        self.lattice.resolve(&self.units, false).expect("validated")
    }

    pub fn drive_geometry(&self) -> DriveGeometry {
        self.drive.resolve().expect("validated")
    }
}

/// Parses and resolves a run config, attaching line numbers to any error.
pub fn load_run(source: &str) -> Result<(RunConfig, ResolvedRun), ConfigError> {
    let config = RunConfig::from_toml(source)?;
    let resolved = config.resolve().map_err(|e| e.locate(source))?;
    Ok((config, resolved))
}

/// Resolves a sweep point, prefixing error paths with `base`.
pub fn resolve_point(config: &RunConfig) -> Result<ResolvedRun, ConfigError> {
    config.resolve().map_err(|e| e.prefixed("base"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 3

[lattice]
rows = 2
cols = 2
spacing = 0.3

[solver]
kind = "cumulant"
alpha = 2
"#;

    #[test]
    fn minimal_config_resolves() {
        let (c, r) = load_run(MINIMAL).unwrap();
        assert_eq!(r.ensemble.lattice.sites(), 4);
        assert_eq!(r.ensemble.order.alpha, 2);
        assert!(!r.ensemble.order.coherent_sector);
        assert_eq!(r.presets, vec![Preset::Decay, Preset::Rate, Preset::SpinSsz]);
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn physical_units_convert_once() {
        let src = MINIMAL.replace("spacing = 0.3", "spacing_nm = 420.5");
        let (_, r) = load_run(&src).unwrap();
        assert!((r.ensemble.lattice.spacing - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_version_is_rejected() {
        let src = MINIMAL.replace("schema_version = 1", "");
        assert!(RunConfig::from_toml(&src).unwrap_err().message.contains("schema_version"));
        let src = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        assert_eq!(RunConfig::from_toml(&src).unwrap_err().line, Some(2));
    }

    #[test]
    fn semantic_errors_carry_lines() {
        let src = MINIMAL.replace("spacing = 0.3", "spacing = -0.3");
        let e = load_run(&src).unwrap_err();
        assert_eq!(e.line, Some(5));
        let src = MINIMAL.replace("alpha = 2", "alpha = 3\ncoherent_sector = true");
        let e = load_run(&src).unwrap_err();
        assert_eq!(e.path.as_deref(), Some("solver.alpha"));
        assert_eq!(e.line, Some(12));
    }

    #[test]
    fn unknown_keys_are_syntax_errors_with_lines() {
        let src = MINIMAL.replace("rows = 2", "rows = 2\nspcing = 0.3");
        let e = RunConfig::from_toml(&src).unwrap_err();
        assert!(e.message.contains("spcing"), "{e}");
        assert!(e.line.is_some());
    }

    #[test]
    fn snapshot_times_join_the_grid() {
        let src = format!("{MINIMAL}\n[analysis]\nsnapshot_times = [0.123]\n");
        let (_, r) = load_run(&src).unwrap();
        assert!(r.ensemble.grid.index_of(0.123).is_some());
        assert!(r.presets.contains(&Preset::Correlations));
    }

    #[test]
    fn near_square_factors() {
        assert_eq!(near_square(16), (4, 4));
        assert_eq!(near_square(12), (3, 4));
        assert_eq!(near_square(7), (1, 7));
    }

    #[test]
    fn scan_spacings_hit_decimal_values() {
        let s = ScanSpec {
            spacing_start: 0.32,
            spacing_stop: 0.8,
            spacing_step: 0.01,
            sigmas: vec![0.0],
            in_plane_only: false,
        };
        let v = s.spacings();
        assert_eq!(v.len(), 49);
        assert_eq!(v[18], 0.5);
        assert_eq!(*v.last().unwrap(), 0.8);
    }
}
