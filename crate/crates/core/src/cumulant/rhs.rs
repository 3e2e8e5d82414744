//! Closed equations of motion for the tracked moments.
//!
//! Notation: `n_a = σ_a†σ_a`, `K = Γ/2 + iJ` with the diagonal removed from all
//! sums, `C_ab = ⟨σ_a†σ_b⟩`, `D_ab = ⟨n_a n_b⟩`, `P_ab = ⟨σ_aσ_b⟩`, `Q_ab = ⟨n_aσ_b⟩`,
//! `T_abc = ⟨n_a n_b n_c⟩`, `E_a;bc = ⟨n_a σ_b†σ_c⟩`.

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use super::state::{Layout, View};
use super::ClosureOrder;
use crate::couplings::CouplingMatrices;
use crate::error::Result;
use crate::ode::OdeSystem;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub struct CumulantSystem {
    pub(crate) layout: Layout,
    /// `K` with zero diagonal.
    k: Array2<Complex64>,
    kc: Array2<Complex64>,
    gamma0: f64,
}

impl CumulantSystem {
    pub fn new(couplings: &CouplingMatrices, order: ClosureOrder) -> Result<Self> {
        let layout = Layout::new(couplings.n(), order)?;
        let mut k = couplings.kernel();
        for a in 0..couplings.n() {
            k[[a, a]] = ZERO;
        }
        let kc = k.mapv(|z| z.conj());
        Ok(Self {
            layout,
            k,
            kc,
            gamma0: couplings.gamma0,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn derivative(&self, y: &[f64], dy: &mut [f64]) {
        dy.fill(0.0);
        let order = self.layout.order;
        match (order.alpha, order.coherent_sector) {
            (1, false) => self.first_incoherent(y, dy),
            (1, true) => self.first_coherent(y, dy),
            (2, false) => self.second_incoherent(y, dy),
            (2, true) => self.second_coherent(y, dy),
            _ => self.third_incoherent(y, dy),
        }
    }

    fn first_incoherent(&self, y: &[f64], dy: &mut [f64]) {
        for (d, n) in dy.iter_mut().zip(y) {
            *d = -self.gamma0 * n;
        }
    }

    fn first_coherent(&self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.layout;
        let v = lay.view(y);
        let n = lay.n;
        let m: Vec<Complex64> = (0..n).map(|a| v.m(a)).collect();
        let field: Vec<Complex64> = (0..n).map(|a| (0..n).map(|j| self.k[[a, j]] * m[j]).sum()).collect();
        let mut w = lay.view_mut(dy);
        for a in 0..n {
            let na = v.n(a);
            w.set_n(a, -self.gamma0 * na - 2.0 * (m[a].conj() * field[a]).re);
            w.set_m(a, -0.5 * self.gamma0 * m[a] + (2.0 * na - 1.0) * field[a]);
        }
    }

    fn coherence_matrix(&self, v: &View) -> Array2<Complex64> {
        let n = self.layout.n;
        Array2::from_shape_fn((n, n), |(a, b)| v.c(a, b))
    }

    /// `Σ_{q≠a} K_aq C_aq` for each `a`.
    fn exchange_flux(&self, c: &Array2<Complex64>) -> Array1<Complex64> {
        let mut s = Array1::zeros(self.layout.n);
        Zip::from(&mut s)
            .and(self.k.rows())
            .and(c.rows())
            .for_each(|s, k, c| *s = k.iter().zip(c).map(|(k, c)| k * c).sum());
        s
    }

    fn second_incoherent(&self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.layout;
        let v = lay.view(y);
        let n = lay.n;
        let g = self.gamma0;
        let c = self.coherence_matrix(&v);
        let s = self.exchange_flux(&c);
        // a_ab = Σ_{q≠a} K*_aq C_qb,  b_ab = Σ_{q≠b} C_aq K_qb.
        let amat = self.kc.dot(&c);
        let bmat = c.dot(&self.k);
        let nv: Vec<f64> = (0..n).map(|a| v.n(a)).collect();

        let mut w = lay.view_mut(dy);
        for a in 0..n {
            w.set_n(a, -g * nv[a] - 2.0 * s[a].re);
        }
        let mut dc = vec![ZERO; lay.pairs()];
        let mut dd = vec![0.0; lay.pairs()];
        let mut idx = 0;
        for b in 0..n {
            for a in 0..b {
                let (na, nb) = (nv[a], nv[b]);
                let kab = self.k[[a, b]];
                let cab = c[[a, b]];
                let dab = v.d(a, b);
                dc[idx] = -g * cab
                    + kab.conj() * (2.0 * dab - nb)
                    + kab * (2.0 * dab - na)
                    + (2.0 * na - 1.0) * (amat[[a, b]] - kab.conj() * nb)
                    + (2.0 * nb - 1.0) * (bmat[[a, b]] - na * kab);
                dd[idx] = -2.0 * g * dab
                    - 2.0 * (nb * (s[a] - kab * cab) + na * (s[b] - kab * cab.conj())).re;
                idx += 1;
            }
        }
        w.section_c().copy_from_slice(&dc);
        w.section_d().copy_from_slice(&dd);
    }

    fn second_coherent(&self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.layout;
        let v = lay.view(y);
        let n = lay.n;
        let g = self.gamma0;
        let k = &self.k;

        // Three-body moments closed at second order.
        let x = |a: usize, q: usize, b: usize| {
            // ⟨n_a σ_q† σ_b⟩
            v.q(a, q).conj() * v.m(b) + v.q(a, b) * v.m(q).conj() + v.c(q, b) * v.n(a)
                - 2.0 * v.n(a) * v.m(q).conj() * v.m(b)
        };
        let ssp = |q: usize, a: usize, b: usize| {
            // ⟨σ_q† σ_a σ_b⟩
            v.c(q, a) * v.m(b) + v.c(q, b) * v.m(a) + v.p(a, b) * v.m(q).conj()
                - 2.0 * v.m(q).conj() * v.m(a) * v.m(b)
        };
        let nss = |a: usize, b: usize, q: usize| {
            // ⟨n_a σ_b σ_q⟩
            v.q(a, b) * v.m(q) + v.q(a, q) * v.m(b) + v.p(b, q) * v.n(a) - 2.0 * v.n(a) * v.m(b) * v.m(q)
        };
        let nns = |a: usize, b: usize, q: usize| {
            // ⟨n_a n_b σ_q⟩
            v.d(a, b) * v.m(q) + v.q(a, q) * v.n(b) + v.q(b, q) * v.n(a) - 2.0 * v.n(a) * v.n(b) * v.m(q)
        };

        struct Row {
            dn: f64,
            dm: Complex64,
            pairs: Vec<(Complex64, f64, Complex64)>,
            dq: Vec<Complex64>,
        }

        let rows: Vec<Row> = (0..n)
            .into_par_iter()
            .map(|b| {
                let mut flux = ZERO;
                let mut dm = -0.5 * g * v.m(b);
                for j in (0..n).filter(|&j| j != b) {
                    flux += k[[b, j]] * v.c(b, j);
                    dm += k[[b, j]] * (2.0 * v.q(b, j) - v.m(j));
                }
                let dn = -g * v.n(b) - 2.0 * flux.re;
                let pairs = (0..b)
                    .map(|a| {
                        let kab = k[[a, b]];
                        let dab = v.d(a, b);
                        let mut dc = -g * v.c(a, b) + kab.conj() * (2.0 * dab - v.n(b)) + kab * (2.0 * dab - v.n(a));
                        let mut dd_sum = ZERO;
                        let mut dp = -g * v.p(a, b);
                        for q in (0..n).filter(|&q| q != a && q != b) {
                            let xa = x(b, a, q); // ⟨n_b σ_a† σ_q⟩
                            let xb = x(a, b, q); // ⟨n_a σ_b† σ_q⟩
                            dc += k[[q, a]].conj() * (2.0 * x(a, q, b) - v.c(q, b)) + k[[b, q]] * (2.0 * xa - v.c(a, q));
                            dd_sum += k[[a, q]] * xa + k[[b, q]] * xb;
                            dp += k[[a, q]] * (2.0 * nss(a, b, q) - v.p(b, q))
                                + k[[b, q]] * (2.0 * nss(b, a, q) - v.p(a, q));
                        }
                        (dc, -2.0 * g * dab - 2.0 * dd_sum.re, dp)
                    })
                    .collect();
                // Row of Q with first index b.
                let a = b;
                let dq = (0..n)
                    .map(|bb| {
                        if bb == a {
                            return ZERO;
                        }
                        let mut acc = -1.5 * g * v.q(a, bb) - k[[a, bb]].conj() * v.q(bb, a);
                        for q in (0..n).filter(|&q| q != a && q != bb) {
                            acc += -k[[q, a]].conj() * ssp(q, a, bb) - k[[a, q]] * ssp(a, bb, q)
                                + k[[bb, q]] * (2.0 * nns(a, bb, q) - v.q(a, q));
                        }
                        acc
                    })
                    .collect();
                Row { dn, dm, pairs, dq }
            })
            .collect();

        let mut w = lay.view_mut(dy);
        for (b, row) in rows.into_iter().enumerate() {
            w.set_n(b, row.dn);
            w.set_m(b, row.dm);
            for (a, (dc, dd, dp)) in row.pairs.into_iter().enumerate() {
                w.set_c(a, b, dc);
                w.set_d(a, b, dd);
                w.set_p(a, b, dp);
            }
            for (bb, dq) in row.dq.into_iter().enumerate() {
                if bb != b {
                    w.set_q(b, bb, dq);
                }
            }
        }
    }

    fn third_incoherent(&self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.layout;
        let v = lay.view(y);
        let n = lay.n;
        let g = self.gamma0;
        let k = &self.k;

        // Four-body moments with the fourth joint cumulant set to zero
        // (U(1)-symmetric sector: only charge-neutral cumulants survive).
        let h = |a: usize, b: usize, q: usize, c: usize| {
            // ⟨n_a n_b σ_q† σ_c⟩
            let cqc = v.c(q, c);
            v.n(b) * v.e(a, q, c) + v.n(a) * v.e(b, q, c) + v.d(a, b) * cqc - 2.0 * v.n(a) * v.n(b) * cqc
        };

        let mut w = lay.view_mut(dy);
        for a in 0..n {
            let flux: Complex64 = (0..n).filter(|&j| j != a).map(|j| k[[a, j]] * v.c(a, j)).sum();
            w.set_n(a, -g * v.n(a) - 2.0 * flux.re);
        }
        for b in 0..n {
            for a in 0..b {
                let kab = k[[a, b]];
                let dab = v.d(a, b);
                let mut dc = -g * v.c(a, b) + kab.conj() * (2.0 * dab - v.n(b)) + kab * (2.0 * dab - v.n(a));
                let mut dd = ZERO;
                for q in (0..n).filter(|&q| q != a && q != b) {
                    dc += k[[q, a]].conj() * (2.0 * v.e(a, q, b) - v.c(q, b)) + k[[b, q]] * (2.0 * v.e(b, a, q) - v.c(a, q));
                    dd += k[[a, q]] * v.e(b, a, q) + k[[b, q]] * v.e(a, b, q);
                }
                w.set_c(a, b, dc);
                w.set_d(a, b, -2.0 * g * dab - 2.0 * dd.re);
            }
        }

        let triples: Vec<(usize, usize, usize)> = (0..n)
            .flat_map(|c| (0..c).flat_map(move |b| (0..b).map(move |a| (a, b, c))))
            .collect();
        let dt: Vec<f64> = triples
            .par_iter()
            .map(|&(a, b, c)| {
                let set = [a, b, c];
                let mut acc = ZERO;
                for (x, y, z) in [(a, b, c), (b, a, c), (c, a, b)] {
                    for q in (0..n).filter(|q| !set.contains(q)) {
                        acc += k[[x, q]] * h(y, z, x, q);
                    }
                }
                -3.0 * g * v.t(a, b, c) - 2.0 * acc.re
            })
            .collect();
        w.section_t().copy_from_slice(&dt);

        let pairs = lay.pairs();
        let de: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| {
                let mut out = vec![0.0; 2 * pairs];
                for c in 0..n {
                    for b in 0..c {
                        if a == b || a == c {
                            continue;
                        }
                        let set = [a, b, c];
                        let t = v.t(a, b, c);
                        let mut acc = -2.0 * g * v.e(a, b, c) - k[[c, a]].conj() * v.e(c, b, a) - k[[a, b]] * v.e(b, a, c)
                            + k[[c, b]].conj() * (2.0 * t - v.d(a, c))
                            + k[[c, b]] * (2.0 * t - v.d(a, b));
                        for q in (0..n).filter(|q| !set.contains(q)) {
                            let g1 = v.c(q, a) * v.c(b, c) + v.c(q, c) * v.c(b, a);
                            let g2 = v.c(a, c) * v.c(b, q) + v.c(a, q) * v.c(b, c);
                            acc += -k[[q, a]].conj() * g1 - k[[a, q]] * g2
                                + k[[q, b]].conj() * (2.0 * h(a, b, q, c) - v.e(a, q, c))
                                + k[[c, q]] * (2.0 * h(a, c, b, q) - v.e(a, b, q));
                        }
                        let idx = super::state::pair_index(b, c);
                        out[2 * idx] = acc.re;
                        out[2 * idx + 1] = acc.im;
                    }
                }
                out
            })
            .collect();
        let section = w.section_e();
        for (a, block) in de.into_iter().enumerate() {
            section[a * 2 * pairs..(a + 1) * 2 * pairs].copy_from_slice(&block);
        }
    }
}

impl OdeSystem for CumulantSystem {
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.derivative(y, dy);
    }
}
