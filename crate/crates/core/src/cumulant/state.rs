use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ClosureOrder;
use crate::complex_view::as_complex_mut;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::init::InitialStateSpec;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub(crate) fn pair_index(a: usize, b: usize) -> usize {
    debug_assert!(a < b);
    b * (b - 1) / 2 + a
}

pub(crate) fn triple_index(a: usize, b: usize, c: usize) -> usize {
    debug_assert!(a < b && b < c);
    c * (c - 1) * (c - 2) / 6 + b * (b - 1) / 2 + a
}

fn sort3(a: usize, b: usize, c: usize) -> (usize, usize, usize) {
    let mut v = [a, b, c];
    v.sort_unstable();
    (v[0], v[1], v[2])
}

/// Offsets (in `f64` units) of each tracked tensor inside the flat state vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub order: ClosureOrder,
    off_m: usize,
    off_c: usize,
    off_d: usize,
    off_p: usize,
    off_q: usize,
    off_t: usize,
    off_e: usize,
    len: usize,
}

impl Layout {
    pub fn new(n: usize, order: ClosureOrder) -> Result<Self> {
        order.validate()?;
        let pairs = n * n.saturating_sub(1) / 2;
        let triples = if n >= 3 { n * (n - 1) * (n - 2) / 6 } else { 0 };
        let coh = order.coherent_sector;
        let second = order.alpha >= 2;
        let third = order.alpha >= 3;
        let mut off = n;
        let off_m = off;
        off += if coh { 2 * n } else { 0 };
        let off_c = off;
        off += if second { 2 * pairs } else { 0 };
        let off_d = off;
        off += if second { pairs } else { 0 };
        let off_p = off;
        off += if second && coh { 2 * pairs } else { 0 };
        let off_q = off;
        off += if second && coh { 2 * n * n } else { 0 };
        let off_t = off;
        off += if third { triples } else { 0 };
        let off_e = off;
        off += if third { 2 * n * pairs } else { 0 };
        Ok(Self {
            n,
            order,
            off_m,
            off_c,
            off_d,
            off_p,
            off_q,
            off_t,
            off_e,
            len: off,
        })
    }

    /// Number of `f64` entries in the state vector.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub(crate) fn pairs(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub(crate) fn view<'a>(&'a self, data: &'a [f64]) -> View<'a> {
        View { lay: self, data }
    }

    pub(crate) fn view_mut<'a>(&'a self, data: &'a mut [f64]) -> ViewMut<'a> {
        ViewMut { lay: self, data }
    }
}

/// Read access to a packed state with index-coincidence rules applied.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub lay: &'a Layout,
    pub data: &'a [f64],
}

impl<'a> View<'a> {
    fn cx(&self, off: usize, k: usize) -> Complex64 {
        Complex64::new(self.data[off + 2 * k], self.data[off + 2 * k + 1])
    }

    pub fn populations(&self) -> &'a [f64] {
        &self.data[..self.lay.n]
    }

    pub fn coherent(&self) -> bool {
        self.lay.order.coherent_sector
    }

    pub fn alpha(&self) -> u8 {
        self.lay.order.alpha
    }

    /// `⟨n_a⟩`.
    pub fn n(&self, a: usize) -> f64 {
        self.data[a]
    }

    /// `⟨σ_a⟩`.
    pub fn m(&self, a: usize) -> Complex64 {
        if self.coherent() {
            self.cx(self.lay.off_m, a)
        } else {
            ZERO
        }
    }

    /// `⟨σ_a† σ_b⟩`.
    pub fn c(&self, a: usize, b: usize) -> Complex64 {
        if a == b {
            return Complex64::new(self.n(a), 0.0);
        }
        if self.alpha() == 1 {
            return self.m(a).conj() * self.m(b);
        }
        if a < b {
            self.cx(self.lay.off_c, pair_index(a, b))
        } else {
            self.cx(self.lay.off_c, pair_index(b, a)).conj()
        }
    }

    /// `⟨n_a n_b⟩`.
    pub fn d(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.n(a);
        }
        if self.alpha() == 1 {
            return self.n(a) * self.n(b);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.data[self.lay.off_d + pair_index(lo, hi)]
    }

    /// `⟨σ_a σ_b⟩`.
    pub fn p(&self, a: usize, b: usize) -> Complex64 {
        if a == b || !self.coherent() {
            return ZERO;
        }
        if self.alpha() == 1 {
            return self.m(a) * self.m(b);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.cx(self.lay.off_p, pair_index(lo, hi))
    }

    /// `⟨n_a σ_b⟩`.
    pub fn q(&self, a: usize, b: usize) -> Complex64 {
        if a == b || !self.coherent() {
            return ZERO;
        }
        if self.alpha() == 1 {
            return self.n(a) * self.m(b);
        }
        self.cx(self.lay.off_q, a * self.lay.n + b)
    }

    /// `⟨n_a n_b n_c⟩` for distinct sites.
    pub fn t(&self, a: usize, b: usize, c: usize) -> f64 {
        let (x, y, z) = sort3(a, b, c);
        self.data[self.lay.off_t + triple_index(x, y, z)]
    }

    /// `⟨n_a σ_b† σ_c⟩` with `b, c ≠ a`.
    pub fn e(&self, a: usize, b: usize, c: usize) -> Complex64 {
        if b == c {
            return Complex64::new(self.d(a, b), 0.0);
        }
        let pairs = self.lay.pairs();
        if b < c {
            self.cx(self.lay.off_e, a * pairs + pair_index(b, c))
        } else {
            self.cx(self.lay.off_e, a * pairs + pair_index(c, b)).conj()
        }
    }
}

/// Write access to the independent entries of a packed state.
pub(crate) struct ViewMut<'a> {
    pub lay: &'a Layout,
    pub data: &'a mut [f64],
}

impl ViewMut<'_> {
    fn set_cx(&mut self, off: usize, k: usize, v: Complex64) {
        self.data[off + 2 * k] = v.re;
        self.data[off + 2 * k + 1] = v.im;
    }

    pub fn set_n(&mut self, a: usize, v: f64) {
        self.data[a] = v;
    }

    pub fn set_m(&mut self, a: usize, v: Complex64) {
        self.set_cx(self.lay.off_m, a, v);
    }

    /// Requires `a < b`.
    pub fn set_c(&mut self, a: usize, b: usize, v: Complex64) {
        self.set_cx(self.lay.off_c, pair_index(a, b), v);
    }

    /// Requires `a < b`.
    pub fn set_d(&mut self, a: usize, b: usize, v: f64) {
        self.data[self.lay.off_d + pair_index(a, b)] = v;
    }

    /// Requires `a < b`.
    pub fn set_p(&mut self, a: usize, b: usize, v: Complex64) {
        self.set_cx(self.lay.off_p, pair_index(a, b), v);
    }

    /// Requires `a ≠ b`.
    pub fn set_q(&mut self, a: usize, b: usize, v: Complex64) {
        let n = self.lay.n;
        self.set_cx(self.lay.off_q, a * n + b, v);
    }

    /// Requires `a < b < c`.
    pub fn set_t(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[self.lay.off_t + triple_index(a, b, c)] = v;
    }

    /// Requires `b < c`, both different from `a`.
    pub fn set_e(&mut self, a: usize, b: usize, c: usize, v: Complex64) {
        let pairs = self.lay.pairs();
        self.set_cx(self.lay.off_e, a * pairs + pair_index(b, c), v);
    }

    pub(crate) fn section_c(&mut self) -> &mut [Complex64] {
        let len = 2 * self.lay.pairs();
        as_complex_mut(&mut self.data[self.lay.off_c..self.lay.off_c + len])
    }

    pub(crate) fn section_d(&mut self) -> &mut [f64] {
        let len = self.lay.pairs();
        &mut self.data[self.lay.off_d..self.lay.off_d + len]
    }

    pub(crate) fn section_e(&mut self) -> &mut [f64] {
        let len = 2 * self.lay.n * self.lay.pairs();
        &mut self.data[self.lay.off_e..self.lay.off_e + len]
    }

    pub(crate) fn section_t(&mut self) -> &mut [f64] {
        let off = self.lay.off_t;
        let len = self.lay.off_e - off;
        &mut self.data[off..off + len]
    }
}

/// Tracked moments of an `N`-atom system at a given closure order.
///
/// Only independent entries are stored: `⟨σ_a†σ_b⟩` for `a < b` (the diagonal is
/// `⟨n_a⟩` by construction), symmetric tensors on ordered index tuples, and
/// `⟨n_a σ_b†σ_c⟩` for `b < c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantState {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl CumulantState {
    pub fn zeros(n: usize, order: ClosureOrder) -> Result<Self> {
        let layout = Layout::new(n, order)?;
        let data = vec![0.0; layout.len()];
        Ok(Self { layout, data })
    }

    /// Uncorrelated product state with per-atom `⟨n_a⟩` and `⟨σ_a⟩`.
    pub fn product(order: ClosureOrder, populations: &[f64], coherences: &[Complex64]) -> Result<Self> {
        let n = populations.len();
        if coherences.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: coherences.len(),
            });
        }
        if !order.coherent_sector && coherences.iter().any(|m| *m != ZERO) {
            return Err(Error::InvalidParameter(
                "initial coherences need a closure that tracks the coherent sector".into(),
            ));
        }
        let mut state = Self::zeros(n, order)?;
        let lay = state.layout.clone();
        let mut w = lay.view_mut(&mut state.data);
        let (p, m) = (populations, coherences);
        for a in 0..n {
            w.set_n(a, p[a]);
            if order.coherent_sector {
                w.set_m(a, m[a]);
            }
        }
        if order.alpha >= 2 {
            for b in 0..n {
                for a in 0..b {
                    w.set_c(a, b, m[a].conj() * m[b]);
                    w.set_d(a, b, p[a] * p[b]);
                    if order.coherent_sector {
                        w.set_p(a, b, m[a] * m[b]);
                    }
                }
            }
            if order.coherent_sector {
                for a in 0..n {
                    for b in (0..n).filter(|&b| b != a) {
                        w.set_q(a, b, p[a] * m[b]);
                    }
                }
            }
        }
        if order.alpha >= 3 {
            for c in 0..n {
                for b in 0..c {
                    for a in 0..b {
                        w.set_t(a, b, c, p[a] * p[b] * p[c]);
                    }
                }
            }
            // Zero-coherence sector: ⟨n_a σ_b†σ_c⟩ vanishes for b ≠ c.
        }
        Ok(state)
    }

    pub fn from_init(init: &InitialStateSpec, positions: &[Vec3], order: ClosureOrder) -> Result<Self> {
        init.validate()?;
        if order.alpha == 3 && init.coherent {
            return Err(Error::InvalidParameter(
                "third-order closure supports incoherent product states only".into(),
            ));
        }
        if init.coherent && !order.coherent_sector {
            return Err(Error::InvalidParameter(
                "a coherent initial state requires the coherent sector".into(),
            ));
        }
        let (p, m): (Vec<f64>, Vec<Complex64>) = positions.iter().map(|&r| init.site_moments(r)).unzip();
        Self::product(order, &p, &m)
    }

    pub fn n_atoms(&self) -> usize {
        self.layout.n
    }

    pub fn order(&self) -> ClosureOrder {
        self.layout.order
    }

    pub fn population(&self, a: usize) -> f64 {
        self.data[a]
    }

    pub fn coherence(&self, a: usize, b: usize) -> Complex64 {
        self.layout.view(&self.data).c(a, b)
    }

    pub fn pair_population(&self, a: usize, b: usize) -> f64 {
        self.layout.view(&self.data).d(a, b)
    }

    pub fn dipole(&self, a: usize) -> Complex64 {
        self.layout.view(&self.data).m(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_maps_are_dense_bijections() {
        let n = 7;
        let mut seen = vec![false; n * (n - 1) / 2];
        for b in 0..n {
            for a in 0..b {
                assert!(!seen[pair_index(a, b)]);
                seen[pair_index(a, b)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let mut seen = vec![false; n * (n - 1) * (n - 2) / 6];
        for c in 0..n {
            for b in 0..c {
                for a in 0..b {
                    assert!(!seen[triple_index(a, b, c)]);
                    seen[triple_index(a, b, c)] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn product_state_moments() {
        let order = ClosureOrder::new(2, true).unwrap();
        let m = [Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.4), Complex64::new(0.0, 0.1)];
        let s = CumulantState::product(order, &[0.5, 0.6, 0.9], &m).unwrap();
        let v = s.layout.view(&s.data);
        assert_eq!(v.c(1, 1).re, 0.6);
        assert!((v.c(2, 0) - m[2].conj() * m[0]).norm() < 1e-16);
        assert!((v.q(2, 1) - 0.9 * m[1]).norm() < 1e-16);
        assert_eq!(v.p(1, 1), ZERO);
    }

    #[test]
    fn third_order_rejects_coherent_initial_state() {
        let order = ClosureOrder::new(3, false).unwrap();
        let init = InitialStateSpec::coherent_fraction(0.5, None);
        assert!(CumulantState::from_init(&init, &[[0.0; 3]], order).is_err());
        assert!(ClosureOrder::new(3, true).is_err());
    }
}
