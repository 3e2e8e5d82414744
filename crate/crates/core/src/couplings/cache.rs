//! Persistence of coupling matrices: a dense text table and a compact binary
//! cache keyed by a content hash of the inputs that determine them.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{coupling_matrices, CouplingMatrices, MotionSpec};
use crate::error::{Error, Result};
use crate::geometry::{dipole_vector, AtomArray};

const MAGIC: &[u8; 4] = b"CPLM";
const VERSION: u32 = 1;

/// Hex SHA-256 over everything `coupling_matrices` reads.
pub fn cache_key(array: &AtomArray, motion: Option<&MotionSpec>) -> String {
    let mut h = Sha256::new();
    h.update(b"couplings-v1");
    h.update([u8::from(array.colocated)]);
    for p in array.occupied_positions() {
        for x in p {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    for c in dipole_vector(&array.drive) {
        h.update(c.re.to_bits().to_le_bytes());
        h.update(c.im.to_bits().to_le_bytes());
    }
    for x in array.drive.beam_direction {
        h.update(x.to_bits().to_le_bytes());
    }
    match motion.filter(|m| !m.is_static()) {
        None => h.update([0u8]),
        Some(m) => {
            h.update([1u8]);
            for w in m.widths {
                h.update(w.to_bits().to_le_bytes());
            }
            h.update(m.excited_band_probability.to_bits().to_le_bytes());
            h.update((m.samples as u64).to_le_bytes());
            h.update(m.seed.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl CouplingMatrices {
    /// Little-endian binary image: magic, version, `N`, γ0, then `J` and `Γ` row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let mut out = Vec::with_capacity(24 + 16 * n * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.gamma0.to_le_bytes());
        for x in self.j.iter().chain(self.gamma.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Malformed(format!("coupling cache: {what}"));
        if bytes.len() < 24 || &bytes[..4] != MAGIC {
            return Err(bad("bad header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad("unsupported version"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let gamma0 = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if bytes.len() != 24 + 16 * n * n {
            return Err(bad("truncated payload"));
        }
        let vals: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let j = Array2::from_shape_vec((n, n), vals[..n * n].to_vec()).map_err(|e| bad(&e.to_string()))?;
        let gamma = Array2::from_shape_vec((n, n), vals[n * n..].to_vec()).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { j, gamma, gamma0 })
    }

    /// Dense plain-text export: a header line per matrix, then one row per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# couplings n={} gamma0={}", self.n(), self.gamma0);
        for (name, m) in [("J", &self.j), ("Gamma", &self.gamma)] {
            let _ = writeln!(out, "# {name}");
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }
}

/// Directory-backed cache of coupling matrices.
#[derive(Clone, Debug)]
pub struct CouplingCache {
    dir: PathBuf,
}

impl CouplingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.cplm"))
    }

    /// Returns cached matrices when present, computing and storing them otherwise.
    pub fn get_or_compute(&self, array: &AtomArray, motion: Option<&MotionSpec>) -> Result<CouplingMatrices> {
        let path = self.path_for(&cache_key(array, motion));
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(c) = CouplingMatrices::from_bytes(&bytes) {
                return Ok(c);
            }
            log::warn!("discarding unreadable coupling cache entry {}", path.display());
        }
        let c = coupling_matrices(array, motion)?;
        fs::write(&path, c.to_bytes())?;
        Ok(c)
    }
}
