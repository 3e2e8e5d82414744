//! Connected density-density correlations on the lattice,
//! `C_d = (4/N_d) Σ_{r_j − r_i = d} (⟨n_i n_j⟩ − ⟨n_i⟩⟨n_j⟩)`.
//!
//! Sums run over ordered pairs, so the map is symmetric under `d → −d` by
//! construction. `C_0` is the on-site variance, `4p(1 − p)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    /// The given fraction of sites closest to the centroid. Sites tied with the
    /// last one admitted are admitted too, keeping the region symmetric.
    Central(f64),
    Mask(Vec<bool>),
}

impl Default for Region {
    fn default() -> Self {
        Region::Central(0.5)
    }
}

impl Region {
    pub fn select(&self, sites: &[[i64; 2]]) -> Result<Vec<usize>> {
        let n = sites.len();
        let chosen: Vec<usize> = match self {
            Region::All => (0..n).collect(),
            Region::Mask(mask) => {
                if mask.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: mask.len(),
                    });
                }
                (0..n).filter(|&i| mask[i]).collect()
            }
            Region::Central(fraction) => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::InvalidParameter(format!("region fraction {fraction} not in (0, 1]")));
                }
                if n == 0 {
                    return Err(Error::InvalidParameter("region is empty".into()));
                }
                let cr = sites.iter().map(|s| s[0] as f64).sum::<f64>() / n as f64;
                let cc = sites.iter().map(|s| s[1] as f64).sum::<f64>() / n as f64;
                let dist: Vec<f64> = sites
                    .iter()
                    .map(|s| (s[0] as f64 - cr).powi(2) + (s[1] as f64 - cc).powi(2))
                    .collect();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
                let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
                let cutoff = dist[order[keep - 1]] + 1e-9;
                let mut v: Vec<usize> = order.into_iter().filter(|&i| dist[i] <= cutoff).collect();
                v.sort_unstable();
                v
            }
        };
        if chosen.is_empty() {
            return Err(Error::InvalidParameter("region is empty".into()));
        }
        Ok(chosen)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    /// Lattice displacements `[Δrow, Δcol]`, sorted.
    pub displacements: Vec<[i64; 2]>,
    pub c_d: Vec<f64>,
    pub pair_counts: Vec<usize>,
    /// Sampling standard errors; present for shot-based estimates.
    pub stderr: Option<Vec<f64>>,
}

impl CorrelationMap {
    pub fn get(&self, d: [i64; 2]) -> Option<f64> {
        self.displacements.iter().position(|&x| x == d).map(|k| self.c_d[k])
    }

    pub fn stderr_at(&self, d: [i64; 2]) -> Option<f64> {
        let k = self.displacements.iter().position(|&x| x == d)?;
        self.stderr.as_ref().map(|s| s[k])
    }

    /// Mean of `C_d` over the four nearest-neighbour displacements present.
    pub fn nearest_neighbor_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = [[0, 1], [0, -1], [1, 0], [-1, 0]]
            .iter()
            .filter_map(|&d| self.get(d))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `"FM"` or `"AFM"` from the sign of the nearest-neighbour mean. Descriptive only.
    pub fn label(&self) -> Option<&'static str> {
        self.nearest_neighbor_mean()
            .map(|c| if c > 0.0 { "FM" } else if c < 0.0 { "AFM" } else { "none" })
    }

    /// One row per displacement: `d_row,d_col,C_d,N_d[,stderr]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# correlation-map v1\n");
        let header = if self.stderr.is_some() { "d_row,d_col,C_d,N_d,stderr" } else { "d_row,d_col,C_d,N_d" };
        out.push_str(header);
        out.push('\n');
        for k in 0..self.displacements.len() {
            let [r, c] = self.displacements[k];
            let _ = write!(out, "{r},{c},{:.12e},{}", self.c_d[k], self.pair_counts[k]);
            if let Some(s) = &self.stderr {
                let _ = write!(out, ",{:.12e}", s[k]);
            }
            out.push('\n');
        }
        out
    }

    /// Dense row-major grid over the displacement bounding box; missing
    /// displacements are NaN. Returns `(row_offsets, col_offsets, values)`.
    pub fn to_grid(&self) -> (Vec<i64>, Vec<i64>, Vec<f64>) {
        let rmax = self.displacements.iter().map(|d| d[0].abs()).max().unwrap_or(0);
        let cmax = self.displacements.iter().map(|d| d[1].abs()).max().unwrap_or(0);
        let rows: Vec<i64> = (-rmax..=rmax).collect();
        let cols: Vec<i64> = (-cmax..=cmax).collect();
        let mut vals = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                vals.push(self.get([r, c]).unwrap_or(f64::NAN));
            }
        }
        (rows, cols, vals)
    }
}

/// Ordered pairs of region sites grouped by displacement.
fn pairs_by_displacement(sites: &[[i64; 2]], region: &[usize]) -> BTreeMap<[i64; 2], Vec<(usize, usize)>> {
    let mut groups: BTreeMap<[i64; 2], Vec<(usize, usize)>> = BTreeMap::new();
    for &i in region {
        for &j in region {
            let d = [sites[j][0] - sites[i][0], sites[j][1] - sites[i][1]];
            groups.entry(d).or_default().push((i, j));
        }
    }
    groups
}

/// Correlation map from single-site and pair moments.
///
/// `pair_populations[[i, j]] = ⟨n_i n_j⟩`; its diagonal is ignored in favour of
/// `⟨n_i²⟩ = ⟨n_i⟩`.
pub fn connected_correlations(
    sites: &[[i64; 2]],
    populations: &[f64],
    pair_populations: &Array2<f64>,
    region: &Region,
) -> Result<CorrelationMap> {
    let n = sites.len();
    if populations.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: populations.len(),
        });
    }
    if pair_populations.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: pair_populations.nrows(),
        });
    }
    let chosen = region.select(sites)?;
    let mut map = CorrelationMap {
        displacements: Vec::new(),
        c_d: Vec::new(),
        pair_counts: Vec::new(),
        stderr: None,
    };
    for (d, pairs) in pairs_by_displacement(sites, &chosen) {
        let sum: f64 = pairs
            .iter()
            .map(|&(i, j)| {
                let nn = if i == j { populations[i] } else { pair_populations[[i, j]] };
                nn - populations[i] * populations[j]
            })
            .sum();
        map.displacements.push(d);
        map.c_d.push(4.0 * sum / pairs.len() as f64);
        map.pair_counts.push(pairs.len());
    }
    Ok(map)
}

/// Correlation map estimated from site-resolved snapshots (`shots[s][i]` is
/// whether site `i` was excited in shot `s`).
///
/// Covariances use the unbiased `1/(S − 1)` normalization. The standard error of
/// each `C_d` is that of its per-shot contributions
/// `(4/N_d) Σ (x_i − x̄_i)(x_j − x̄_j)`.
pub fn connected_correlations_from_shots(
    sites: &[[i64; 2]],
    shots: &[Vec<bool>],
    region: &Region,
) -> Result<CorrelationMap> {
    let n = sites.len();
    let s = shots.len();
    if s < 2 {
        return Err(Error::InvalidParameter("need at least two shots".into()));
    }
    if let Some(bad) = shots.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let chosen = region.select(sites)?;
    let mut mean = vec![0.0; n];
    for shot in shots {
        for i in 0..n {
            mean[i] += f64::from(u8::from(shot[i]));
        }
    }
    mean.iter_mut().for_each(|m| *m /= s as f64);
    let centred: Vec<Vec<f64>> = shots
        .iter()
        .map(|shot| (0..n).map(|i| f64::from(u8::from(shot[i])) - mean[i]).collect())
        .collect();

    let mut map = CorrelationMap {
        displacements: Vec::new(),
        c_d: Vec::new(),
        pair_counts: Vec::new(),
        stderr: Some(Vec::new()),
    };
    let bessel = s as f64 / (s as f64 - 1.0);
    for (d, pairs) in pairs_by_displacement(sites, &chosen) {
        let w = 4.0 / pairs.len() as f64;
        let per_shot: Vec<f64> = centred
            .iter()
            .map(|x| w * pairs.iter().map(|&(i, j)| x[i] * x[j]).sum::<f64>())
            .collect();
        let m = crate::stats::mean(&per_shot);
        map.displacements.push(d);
        map.c_d.push(bessel * m);
        map.pair_counts.push(pairs.len());
        map.stderr.as_mut().unwrap().push(bessel * crate::stats::standard_error(&per_shot));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(r: i64, c: i64) -> Vec<[i64; 2]> {
        (0..r).flat_map(|i| (0..c).map(move |j| [i, j])).collect()
    }

    #[test]
    fn central_region_of_three_by_three() {
        let sites = square(3, 3);
        assert_eq!(Region::Central(0.5).select(&sites).unwrap(), vec![1, 3, 4, 5, 7]);
        assert_eq!(Region::All.select(&sites).unwrap().len(), 9);
        assert!(Region::Mask(vec![false; 9]).select(&sites).is_err());
    }

    #[test]
    fn independent_shots() {
        let sites = square(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shots: Vec<Vec<bool>> = (0..100_000).map(|_| (0..16).map(|_| rng.random::<bool>()).collect()).collect();
        let map = connected_correlations_from_shots(&sites, &shots, &Region::All).unwrap();
        for (k, d) in map.displacements.iter().enumerate() {
            let se = map.stderr.as_ref().unwrap()[k];
            if *d == [0, 0] {
                assert!((map.c_d[k] - 1.0).abs() < 5.0 * se.max(1e-3));
            } else {
                assert!(map.c_d[k].abs() < 5.0 * se, "d = {d:?}: {} vs {se}", map.c_d[k]);
            }
        }
    }

    #[test]
    fn perfectly_correlated_shots() {
        let sites = square(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shots: Vec<Vec<bool>> = (0..20_000)
            .map(|_| {
                let b = rng.random::<bool>();
                vec![b; 9]
            })
            .collect();
        let map = connected_correlations_from_shots(&sites, &shots, &Region::All).unwrap();
        for c in &map.c_d {
            assert!((c - 1.0).abs() < 0.03, "{c}");
        }
    }

    #[test]
    fn map_is_symmetric() {
        let sites = square(3, 4);
        let n = sites.len();
        let pops: Vec<f64> = (0..n).map(|i| 0.2 + 0.05 * i as f64).collect();
        let pair = Array2::from_shape_fn((n, n), |(i, j)| pops[i] * pops[j] + 0.01 * ((i * j) % 3) as f64 * f64::from(u8::from(i != j)));
        let pair = (&pair + &pair.t()) / 2.0;
        let map = connected_correlations(&sites, &pops, &pair, &Region::All).unwrap();
        for (k, d) in map.displacements.iter().enumerate() {
            let back = map.get([-d[0], -d[1]]).unwrap();
            assert!((back - map.c_d[k]).abs() < 1e-15);
        }
        assert!(map.to_csv().lines().count() == map.displacements.len() + 2);
    }
}
