//! Emitter arrays and the drive geometry that fixes the transition dipole.
//!
//! Lengths are in units of the transition wavelength λ. Sites of an `R × C`
//! square lattice sit at `col·a·x̂ + row·a·ŷ`; optional Gaussian disorder is
//! added on top, and occupancy is drawn site by site from a Bernoulli
//! distribution to mimic imperfect loading.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

pub type Vec3 = [f64; 3];

/// Number of attempts made by the exact-N loading mode before giving up.
const EXACT_FILL_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeGeometry {
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    /// Lattice constant in units of λ.
    pub spacing: f64,
    pub geometry: LatticeGeometry,
    pub fill_probability: f64,
    /// When set, occupancy draws are rejected until exactly this many sites are filled.
    #[serde(default)]
    pub atom_number_target: Option<usize>,
}

impl LatticeSpec {
    pub fn square(rows: usize, cols: usize, spacing: f64) -> Self {
        Self {
            rows,
            cols,
            spacing,
            geometry: LatticeGeometry::Square,
            fill_probability: 1.0,
            atom_number_target: None,
        }
    }

    pub fn with_fill(mut self, fill_probability: f64) -> Self {
        self.fill_probability = fill_probability;
        self
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter(
                "lattice needs at least one row and one column".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.fill_probability) {
            return Err(Error::InvalidParameter(format!(
                "fill probability {} outside [0, 1]",
                self.fill_probability
            )));
        }
        if let Some(target) = self.atom_number_target {
            if target == 0 || target > self.sites() {
                return Err(Error::InvalidParameter(format!(
                    "atom number target {target} not in 1..={}",
                    self.sites()
                )));
            }
        }
        Ok(())
    }
}

/// Isotropic Gaussian displacement of every site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    /// Standard deviation per axis, units of λ.
    pub sigma: f64,
    pub seed: u64,
    /// Restrict displacements to the lattice plane.
    #[serde(default)]
    pub in_plane_only: bool,
}

impl DisorderSpec {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            seed: 0,
            in_plane_only: false,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            in_plane_only: false,
        }
    }
}

impl Default for DisorderSpec {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    SigmaMinus,
    SigmaPlus,
}

impl Polarization {
    fn handedness(self) -> f64 {
        match self {
            Polarization::SigmaMinus => -1.0,
            Polarization::SigmaPlus => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveGeometry {
    pub quantization_axis: Vec3,
    pub beam_direction: Vec3,
    pub polarization: Polarization,
}

impl Default for DriveGeometry {
    /// Quantization axis 30° and beam 15° from x̂, both in the lattice plane, σ⁻ light.
    fn default() -> Self {
        Self {
            quantization_axis: in_plane_unit(30.0),
            beam_direction: in_plane_unit(15.0),
            polarization: Polarization::SigmaMinus,
        }
    }
}

fn in_plane_unit(degrees: f64) -> Vec3 {
    let phi = degrees.to_radians();
    [phi.cos(), phi.sin(), 0.0]
}

impl DriveGeometry {
    /// Builds a drive geometry, normalizing both direction vectors.
    pub fn new(quantization_axis: Vec3, beam_direction: Vec3, polarization: Polarization) -> Result<Self> {
        Ok(Self {
            quantization_axis: normalized(quantization_axis)?,
            beam_direction: normalized(beam_direction)?,
            polarization,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quantization axis", self.quantization_axis),
            ("beam direction", self.beam_direction),
        ] {
            if (norm(v) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("{name} is not a unit vector")));
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn normalized(v: Vec3) -> Result<Vec3> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter("direction vector must be non-zero".into()));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Circular transition dipole `(ê₁ + s·i·ê₂)/√2` perpendicular to the quantization axis.
///
/// `(ê₁, ê₂, q̂)` is a right-handed orthonormal triad with `ê₁ ∝ ẑ × q̂`, falling
/// back to `ê₁ = x̂` when `q̂ ∥ ẑ`. Any other choice of `ê₁` changes the dipole by a
/// global phase only, which drops out of the couplings.
pub fn dipole_vector(drive: &DriveGeometry) -> [Complex64; 3] {
    let q = drive.quantization_axis;
    let z_cross_q = cross([0.0, 0.0, 1.0], q);
    let e1 = if norm(z_cross_q) < 1e-12 {
        if q[2] > 0.0 {
            [1.0, 0.0, 0.0]
        } else {
            // q = -z: keep the triad right-handed.
            [-1.0, 0.0, 0.0]
        }
    } else {
        let n = norm(z_cross_q);
        [z_cross_q[0] / n, z_cross_q[1] / n, z_cross_q[2] / n]
    };
    let e2 = cross(q, e1);
    let s = drive.polarization.handedness();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    std::array::from_fn(|k| Complex64::new(e1[k] * inv_sqrt2, s * e2[k] * inv_sqrt2))
}

/// Emitter positions with their occupancy and the drive that defines the dipole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomArray {
    pub positions: Vec<Vec3>,
    pub occupied: Vec<bool>,
    /// Integer lattice coordinates `[row, col]` of every site.
    pub sites: Vec<[i64; 2]>,
    pub drive: DriveGeometry,
    pub spacing: f64,
    /// All atoms sit at one point (Dicke limit).
    #[serde(default)]
    pub colocated: bool,
}

impl AtomArray {
    /// Number of occupied sites.
    pub fn n_atoms(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn occupied_indices(&self) -> Vec<usize> {
        (0..self.positions.len()).filter(|&i| self.occupied[i]).collect()
    }

    pub fn occupied_positions(&self) -> Vec<Vec3> {
        self.occupied_indices().into_iter().map(|i| self.positions[i]).collect()
    }

    pub fn occupied_sites(&self) -> Vec<[i64; 2]> {
        self.occupied_indices().into_iter().map(|i| self.sites[i]).collect()
    }

    /// Checks the simulation preconditions: at least one atom, no coincident atoms
    /// unless the array is an explicit Dicke-limit construction.
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.occupied.len() || self.positions.len() != self.sites.len() {
            return Err(Error::Malformed("array field lengths disagree".into()));
        }
        if self.n_atoms() == 0 {
            return Err(Error::InvalidParameter("array has no occupied sites".into()));
        }
        self.drive.validate()?;
        if !self.colocated {
            let idx = self.occupied_indices();
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    let p = self.positions[i];
                    let q = self.positions[j];
                    if p == q {
                        return Err(Error::DuplicatePosition { first: i, second: j });
                    }
                }
            }
        }
        Ok(())
    }

    /// Plain-text site table: header metadata followed by `index,x,y,z,occupied,row,col`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let q = self.drive.quantization_axis;
        let b = self.drive.beam_direction;
        let pol = match self.drive.polarization {
            Polarization::SigmaMinus => "sigma_minus",
            Polarization::SigmaPlus => "sigma_plus",
        };
        let _ = writeln!(out, "# atom-array v1");
        let _ = writeln!(out, "# spacing = {}", self.spacing);
        let _ = writeln!(out, "# colocated = {}", self.colocated);
        let _ = writeln!(out, "# quantization_axis = {} {} {}", q[0], q[1], q[2]);
        let _ = writeln!(out, "# beam_direction = {} {} {}", b[0], b[1], b[2]);
        let _ = writeln!(out, "# polarization = {pol}");
        let _ = writeln!(out, "index,x,y,z,occupied,row,col");
        for (i, p) in self.positions.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{}",
                p[0],
                p[1],
                p[2],
                u8::from(self.occupied[i]),
                self.sites[i][0],
                self.sites[i][1]
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut spacing = None;
        let mut colocated = false;
        let mut q = None;
        let mut b = None;
        let mut pol = Polarization::SigmaMinus;
        let mut positions = Vec::new();
        let mut occupied = Vec::new();
        let mut sites = Vec::new();
        let parse_vec = |s: &str| -> Result<Vec3> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| Error::Malformed(e.to_string())))
                .collect::<Result<_>>()?;
            v.try_into()
                .map_err(|_| Error::Malformed("expected three components".into()))
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("index") {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once('=') {
                    let value = value.trim();
                    match key.trim() {
                        "spacing" => {
                            spacing = Some(value.parse::<f64>().map_err(|e| Error::Malformed(e.to_string()))?)
                        }
                        "colocated" => colocated = value == "true",
                        "quantization_axis" => q = Some(parse_vec(value)?),
                        "beam_direction" => b = Some(parse_vec(value)?),
                        "polarization" => {
                            pol = match value {
                                "sigma_minus" => Polarization::SigmaMinus,
                                "sigma_plus" => Polarization::SigmaPlus,
                                other => return Err(Error::Malformed(format!("unknown polarization {other}"))),
                            }
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Malformed(format!("expected 7 columns: {line}")));
            }
            let f = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Malformed(e.to_string()));
            let i = |s: &str| s.trim().parse::<i64>().map_err(|e| Error::Malformed(e.to_string()));
            positions.push([f(cols[1])?, f(cols[2])?, f(cols[3])?]);
            occupied.push(cols[4].trim() == "1");
            sites.push([i(cols[5])?, i(cols[6])?]);
        }
        let drive = DriveGeometry {
            quantization_axis: q.ok_or_else(|| Error::Malformed("missing quantization_axis".into()))?,
            beam_direction: b.ok_or_else(|| Error::Malformed("missing beam_direction".into()))?,
            polarization: pol,
        };
        Ok(Self {
            positions,
            occupied,
            sites,
            drive,
            spacing: spacing.ok_or_else(|| Error::Malformed("missing spacing".into()))?,
            colocated,
        })
    }
}

/// Builds a (possibly partially filled, possibly disordered) lattice.
///
/// Occupancy comes from `seed`; displacements from a stream derived from both
/// `disorder.seed` and `seed`, drawn for every site in index order so the
/// disorder pattern does not depend on which sites happen to be filled.
pub fn build_array(
    spec: &LatticeSpec,
    disorder: &DisorderSpec,
    drive: &DriveGeometry,
    seed: u64,
) -> Result<AtomArray> {
    spec.validate()?;
    drive.validate()?;
    if !(disorder.sigma >= 0.0) || !disorder.sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "disorder sigma must be non-negative, got {}",
            disorder.sigma
        )));
    }
    let n_sites = spec.sites();
    let mut sites = Vec::with_capacity(n_sites);
    let mut positions = Vec::with_capacity(n_sites);
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            sites.push([row as i64, col as i64]);
            positions.push([col as f64 * spec.spacing, row as f64 * spec.spacing, 0.0]);
        }
    }

    let mut occ_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let draw = |rng: &mut ChaCha8Rng| -> Vec<bool> {
        (0..n_sites)
            .map(|_| rng.random::<f64>() < spec.fill_probability)
            .collect()
    };
    let occupied = match spec.atom_number_target {
        None => draw(&mut occ_rng),
        Some(target) => {
            let mut attempt = 0;
            loop {
                let occ = draw(&mut occ_rng);
                if occ.iter().filter(|&&o| o).count() == target {
                    break occ;
                }
                attempt += 1;
                if attempt >= EXACT_FILL_ATTEMPTS {
                    return Err(Error::EmptyRealization { seed });
                }
            }
        }
    };
    if !occupied.iter().any(|&o| o) {
        return Err(Error::EmptyRealization { seed });
    }

    if disorder.sigma > 0.0 {
        let normal = Normal::new(0.0, disorder.sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(disorder.seed, seed ^ 0x5eed_d150));
        for p in positions.iter_mut() {
            let d: Vec3 = std::array::from_fn(|_| normal.sample(&mut rng));
            p[0] += d[0];
            p[1] += d[1];
            if !disorder.in_plane_only {
                p[2] += d[2];
            }
        }
    }

    Ok(AtomArray {
        positions,
        occupied,
        sites,
        drive: drive.clone(),
        spacing: spec.spacing,
        colocated: false,
    })
}

/// `n` co-located atoms: every pair couples in the `r → 0` limit.
pub fn dicke_array(n: usize, drive: &DriveGeometry) -> Result<AtomArray> {
    if n == 0 {
        return Err(Error::InvalidParameter("Dicke array needs n >= 1".into()));
    }
    Ok(AtomArray {
        positions: vec![[0.0; 3]; n],
        occupied: vec![true; n],
        sites: (0..n as i64).map(|i| [0, i]).collect(),
        drive: drive.clone(),
        spacing: 0.0,
        colocated: n > 1,
    })
}
