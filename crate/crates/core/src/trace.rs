//! Time grids and the observable traces produced by both solvers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output time grid (units of τ = 1/γ0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t_end: f64, intervals: usize) -> Self {
        let dt = t_end / intervals as f64;
        Self {
            times: (0..=intervals).map(|i| i as f64 * dt).collect(),
        }
    }

    /// Uniform spacing `dt` up to `t_uniform`, then `log_points` logarithmically
    /// spaced times out to `t_end`.
    pub fn uniform_then_log(t_uniform: f64, dt: f64, t_end: f64, log_points: usize) -> Self {
        let intervals = (t_uniform / dt).round() as usize;
        let mut times: Vec<f64> = (0..=intervals).map(|i| i as f64 * t_uniform / intervals as f64).collect();
        if t_end > t_uniform && log_points > 0 {
            let ratio = (t_end / t_uniform).ln() / log_points as f64;
            times.extend((1..=log_points).map(|i| {
                if i == log_points {
                    t_end
                } else {
                    t_uniform * (ratio * i as f64).exp()
                }
            }));
        }
        Self { times }
    }

    /// Dense grid on [0, 5τ] with a logarithmic extension to 20τ.
    pub fn standard() -> Self {
        Self::uniform_then_log(5.0, 0.05, 20.0, 24)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidParameter("empty time grid".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Index of the grid point equal to `t` (to 1e-12).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

/// Single-time pair correlators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSnapshot {
    pub time: f64,
    /// `⟨n_i⟩`.
    pub populations: Vec<f64>,
    /// `⟨n_i n_j⟩` with `⟨n_i⟩` on the diagonal.
    pub pair_populations: Array2<f64>,
    /// `⟨σ_i† σ_j⟩` with `⟨n_i⟩` on the diagonal.
    pub coherences: Array2<Complex64>,
}

/// Standard errors of an ensemble-averaged trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceErrors {
    pub n_excited: Vec<f64>,
    pub emission_rate: Vec<f64>,
    pub gamma_normalized: Vec<f64>,
    pub s_z: Vec<f64>,
    pub m2: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableTrace {
    pub n_atoms: usize,
    pub times: Vec<f64>,
    pub n_excited: Vec<f64>,
    /// Photon flux `Σ_ij Γ_ij ⟨σ_i† σ_j⟩`.
    pub emission_rate: Vec<f64>,
    pub s_z: Vec<f64>,
    /// `⟨S_x² + S_y²⟩`.
    pub m2: Vec<f64>,
    /// `⟨S_z²⟩`.
    pub s_z_sq: Vec<f64>,
    #[serde(default)]
    pub stderr: Option<TraceErrors>,
    #[serde(default)]
    pub snapshots: Vec<PairSnapshot>,
}

impl ObservableTrace {
    pub fn new(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `γ(t) = emission / N_e`, in units of γ0.
    pub fn gamma_normalized(&self) -> Vec<f64> {
        self.emission_rate
            .iter()
            .zip(&self.n_excited)
            .map(|(e, n)| if *n > 0.0 { e / n } else { f64::NAN })
            .collect()
    }

    /// Largest normalized rate and the time at which it occurs.
    pub fn peak_gamma(&self) -> (f64, f64) {
        self.gamma_normalized()
            .into_iter()
            .zip(&self.times)
            .filter(|(g, _)| g.is_finite())
            .fold((f64::NEG_INFINITY, 0.0), |acc, (g, &t)| if g > acc.0 { (g, t) } else { acc })
    }

    /// Largest photon flux per atom of the array.
    pub fn peak_emission_per_atom(&self) -> f64 {
        self.emission_rate.iter().copied().fold(f64::NEG_INFINITY, f64::max) / self.n_atoms as f64
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&PairSnapshot> {
        self.snapshots.iter().find(|s| (s.time - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Columnar text: metadata header lines, then
    /// `t,N_e,emission_rate,gamma_normalized,S_z,M2,S_z_sq[,*_stderr]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# observable-trace v1");
        let _ = writeln!(out, "# n_atoms = {}", self.n_atoms);
        let _ = writeln!(out, "# time_unit = tau");
        let mut header = "t,N_e,emission_rate,gamma_normalized,S_z,M2,S_z_sq".to_string();
        if self.stderr.is_some() {
            header.push_str(",N_e_stderr,emission_rate_stderr,gamma_normalized_stderr,S_z_stderr,M2_stderr");
        }
        let _ = writeln!(out, "{header}");
        let gamma = self.gamma_normalized();
        for i in 0..self.len() {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                self.times[i], self.n_excited[i], self.emission_rate[i], gamma[i], self.s_z[i], self.m2[i], self.s_z_sq[i]
            );
            if let Some(e) = &self.stderr {
                let _ = write!(
                    out,
                    ",{},{},{},{},{}",
                    e.n_excited[i], e.emission_rate[i], e.gamma_normalized[i], e.s_z[i], e.m2[i]
                );
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`ObservableTrace::to_csv`]. Only `t` and `N_e`
    /// are mandatory; missing observable columns are filled with NaN.
    pub fn from_csv(text: &str) -> Result<Self> {
        let table = ColumnTable::parse(text)?;
        let n_atoms = table
            .meta
            .get("n_atoms")
            .map(|s| s.parse::<usize>().map_err(|e| Error::Malformed(e.to_string())))
            .transpose()?
            .unwrap_or(0);
        let times = table.column("t")?;
        let len = times.len();
        let opt = |name: &str| table.column(name).unwrap_or_else(|_| vec![f64::NAN; len]);
        let stderr = if table.has("N_e_stderr") {
            Some(TraceErrors {
                n_excited: opt("N_e_stderr"),
                emission_rate: opt("emission_rate_stderr"),
                gamma_normalized: opt("gamma_normalized_stderr"),
                s_z: opt("S_z_stderr"),
                m2: opt("M2_stderr"),
            })
        } else {
            None
        };
        Ok(Self {
            n_atoms,
            n_excited: table.column("N_e")?,
            emission_rate: opt("emission_rate"),
            s_z: opt("S_z"),
            m2: opt("M2"),
            s_z_sq: opt("S_z_sq"),
            times,
            stderr,
            snapshots: Vec::new(),
        })
    }
}

/// A parsed comma-separated table with `# key = value` metadata lines.
#[derive(Clone, Debug, Default)]
pub struct ColumnTable {
    pub meta: BTreeMap<String, String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ColumnTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = ColumnTable::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    table.meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if table.headers.is_empty() {
                table.headers = cells;
            } else {
                if cells.len() != table.headers.len() {
                    return Err(Error::Malformed(format!(
                        "line {}: expected {} columns, found {}",
                        lineno + 1,
                        table.headers.len(),
                        cells.len()
                    )));
                }
                table.rows.push(cells);
            }
        }
        if table.headers.is_empty() {
            return Err(Error::Malformed("missing header row".into()));
        }
        Ok(table)
    }

    pub fn has(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    pub fn raw_column(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed(format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.raw_column(name)?
            .into_iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("column {name}: {e}")))
            })
            .collect()
    }
}
