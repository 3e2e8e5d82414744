//! Symbolic construction of the closed moment equations.
//!
//! This is a second, independent route to the right-hand side: every tracked
//! moment is written as a product of single-site `2×2` operators, the adjoint
//! generator
//!
//! `L†(O) = Σ_ij [Γ_ij σ_i† O σ_j − K*_ij σ_i†σ_j O − K_ij O σ_i†σ_j]`
//!
//! is applied by plain matrix multiplication, and the resulting products are
//! expanded in the single-site basis `{1, n, σ, σ†}`. Moments involving more
//! sites than the closure order are reconstructed from lower-order moments by
//! setting all higher joint cumulants to zero (Möbius inversion over set
//! partitions). It is slow and meant for validation at small `N`.

use num_complex::Complex64;

use super::state::{Layout, View};
use super::ClosureOrder;
use crate::couplings::CouplingMatrices;
use crate::error::Result;
use crate::ode::OdeSystem;

type M2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

const IDENTITY: M2 = [[ONE, ZERO], [ZERO, ONE]];
// Basis index 0 = |g⟩, 1 = |e⟩.
const LOWER: M2 = [[ZERO, ONE], [ZERO, ZERO]];
const RAISE: M2 = [[ZERO, ZERO], [ONE, ZERO]];
const EXCITED: M2 = [[ZERO, ZERO], [ZERO, ONE]];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[ZERO; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, o) in row.iter_mut().enumerate() {
            *o = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Letter {
    /// `σ^ee`
    N,
    /// `σ`
    Lower,
    /// `σ†`
    Raise,
}

impl Letter {
    fn matrix(self) -> M2 {
        match self {
            Letter::N => EXCITED,
            Letter::Lower => LOWER,
            Letter::Raise => RAISE,
        }
    }
}

/// Product of single-site operators on distinct sites.
#[derive(Clone, Debug)]
struct Product {
    sites: Vec<(usize, M2)>,
}

impl Product {
    fn from_letters(letters: &[(usize, Letter)]) -> Self {
        Self {
            sites: letters.iter().map(|&(s, l)| (s, l.matrix())).collect(),
        }
    }

    fn slot(&mut self, site: usize) -> &mut M2 {
        if let Some(pos) = self.sites.iter().position(|(s, _)| *s == site) {
            &mut self.sites[pos].1
        } else {
            self.sites.push((site, IDENTITY));
            &mut self.sites.last_mut().unwrap().1
        }
    }

    fn left(mut self, site: usize, m: &M2) -> Self {
        let slot = self.slot(site);
        *slot = mul(m, slot);
        self
    }

    fn right(mut self, site: usize, m: &M2) -> Self {
        let slot = self.slot(site);
        *slot = mul(slot, m);
        self
    }
}

/// Set partitions of `0..k`, each as a list of blocks.
fn partitions(k: usize) -> Vec<Vec<Vec<usize>>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in partitions(k - 1) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].push(k - 1);
            out.push(q);
        }
        let mut q = p;
        q.push(vec![k - 1]);
        out.push(q);
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Closed equations generated symbolically.
pub struct GenericHierarchy {
    layout: Layout,
    kernel: Vec<Complex64>,
    gamma: Vec<f64>,
    partitions: Vec<Vec<Vec<Vec<usize>>>>,
}

impl GenericHierarchy {
    pub fn new(couplings: &CouplingMatrices, order: ClosureOrder) -> Result<Self> {
        let layout = Layout::new(couplings.n(), order)?;
        Ok(Self {
            layout,
            kernel: couplings.kernel().iter().copied().collect(),
            gamma: couplings.gamma.iter().copied().collect(),
            partitions: (0..=6).map(partitions).collect(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn tracked(&self, v: &View, letters: &[(usize, Letter)]) -> Complex64 {
        use Letter::*;
        let mut ls = letters.to_vec();
        ls.sort_by_key(|&(s, l)| (l, s));
        match ls.as_slice() {
            [] => ONE,
            [(a, N)] => Complex64::new(v.n(*a), 0.0),
            [(a, Lower)] => v.m(*a),
            [(a, Raise)] => v.m(*a).conj(),
            [(a, N), (b, N)] => Complex64::new(v.d(*a, *b), 0.0),
            [(a, N), (b, Lower)] => v.q(*a, *b),
            [(a, N), (b, Raise)] => v.q(*a, *b).conj(),
            [(a, Lower), (b, Lower)] => v.p(*a, *b),
            [(a, Lower), (b, Raise)] => v.c(*b, *a),
            [(a, Raise), (b, Raise)] => v.p(*a, *b).conj(),
            [(a, N), (b, N), (c, N)] => Complex64::new(v.t(*a, *b, *c), 0.0),
            [(a, N), (c, Lower), (b, Raise)] => v.e(*a, *b, *c),
            // Remaining third-order moments carry net U(1) charge and vanish in
            // the only sector where they are tracked.
            [_, _, _] => ZERO,
            _ => unreachable!("moment of {} sites is never tracked", ls.len()),
        }
    }

    fn cumulant(&self, v: &View, letters: &[(usize, Letter)]) -> Complex64 {
        let k = letters.len();
        self.partitions[k]
            .iter()
            .map(|p| {
                let blocks = p.len();
                let sign = if blocks % 2 == 1 { 1.0 } else { -1.0 };
                let weight = sign * factorial(blocks - 1);
                let prod: Complex64 = p
                    .iter()
                    .map(|b| {
                        let sub: Vec<(usize, Letter)> = b.iter().map(|&i| letters[i]).collect();
                        self.tracked(v, &sub)
                    })
                    .product();
                weight * prod
            })
            .sum()
    }

    /// Expectation value of a product of letters on distinct sites under the closure.
    pub(crate) fn moment(&self, v: &View, letters: &[(usize, Letter)]) -> Complex64 {
        let alpha = self.layout.order.alpha as usize;
        if letters.len() <= alpha {
            return self.tracked(v, letters);
        }
        self.partitions[letters.len()]
            .iter()
            .filter(|p| p.iter().all(|b| b.len() <= alpha))
            .map(|p| {
                p.iter()
                    .map(|b| {
                        let sub: Vec<(usize, Letter)> = b.iter().map(|&i| letters[i]).collect();
                        self.cumulant(v, &sub)
                    })
                    .product::<Complex64>()
            })
            .sum()
    }

    fn expect(&self, v: &View, prod: &Product) -> Complex64 {
        // Expand each site in {1, n, σ, σ†}.
        let expansions: Vec<Vec<(Complex64, Option<(usize, Letter)>)>> = prod
            .sites
            .iter()
            .map(|&(s, m)| {
                [
                    (m[0][0], None),
                    (m[1][1] - m[0][0], Some((s, Letter::N))),
                    (m[0][1], Some((s, Letter::Lower))),
                    (m[1][0], Some((s, Letter::Raise))),
                ]
                .into_iter()
                .filter(|(c, _)| *c != ZERO)
                .collect()
            })
            .collect();
        let mut total = ZERO;
        let mut stack: Vec<(usize, Complex64, Vec<(usize, Letter)>)> = vec![(0, ONE, Vec::new())];
        while let Some((depth, coef, letters)) = stack.pop() {
            if depth == expansions.len() {
                total += coef * self.moment(v, &letters);
                continue;
            }
            for (c, l) in &expansions[depth] {
                let mut next = letters.clone();
                if let Some(l) = l {
                    next.push(*l);
                }
                stack.push((depth + 1, coef * c, next));
            }
        }
        total
    }

    /// `d⟨O⟩/dt` for the product `O` of letters on distinct sites.
    pub fn moment_derivative(&self, y: &[f64], letters: &[(usize, Letter)]) -> Complex64 {
        let v = self.layout.view(y);
        let n = self.layout.n;
        let support: Vec<usize> = letters.iter().map(|l| l.0).collect();
        let base = Product::from_letters(letters);
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                if !support.contains(&i) && !support.contains(&j) {
                    continue;
                }
                let kij = self.kernel[i * n + j];
                let gij = self.gamma[i * n + j];
                if gij != 0.0 {
                    let sandwich = base.clone().left(i, &RAISE).right(j, &LOWER);
                    acc += gij * self.expect(&v, &sandwich);
                }
                if kij != ZERO {
                    let pre = base.clone().left(j, &LOWER).left(i, &RAISE);
                    let post = base.clone().right(i, &RAISE).right(j, &LOWER);
                    acc -= kij.conj() * self.expect(&v, &pre) + kij * self.expect(&v, &post);
                }
            }
        }
        acc
    }

    pub fn derivative(&self, y: &[f64], dy: &mut [f64]) {
        use Letter::*;
        let lay = &self.layout;
        let order = lay.order;
        let n = lay.n;
        dy.fill(0.0);
        let mut w = lay.view_mut(dy);
        for a in 0..n {
            w.set_n(a, self.moment_derivative(y, &[(a, N)]).re);
            if order.coherent_sector {
                w.set_m(a, self.moment_derivative(y, &[(a, Lower)]));
            }
        }
        if order.alpha >= 2 {
            for b in 0..n {
                for a in 0..b {
                    w.set_c(a, b, self.moment_derivative(y, &[(a, Raise), (b, Lower)]));
                    w.set_d(a, b, self.moment_derivative(y, &[(a, N), (b, N)]).re);
                    if order.coherent_sector {
                        w.set_p(a, b, self.moment_derivative(y, &[(a, Lower), (b, Lower)]));
                    }
                }
            }
            if order.coherent_sector {
                for a in 0..n {
                    for b in (0..n).filter(|&b| b != a) {
                        w.set_q(a, b, self.moment_derivative(y, &[(a, N), (b, Lower)]));
                    }
                }
            }
        }
        if order.alpha >= 3 {
            for c in 0..n {
                for b in 0..c {
                    for a in 0..b {
                        w.set_t(a, b, c, self.moment_derivative(y, &[(a, N), (b, N), (c, N)]).re);
                    }
                }
            }
            for a in 0..n {
                for c in 0..n {
                    for b in 0..c {
                        if a != b && a != c {
                            w.set_e(a, b, c, self.moment_derivative(y, &[(a, N), (b, Raise), (c, Lower)]));
                        }
                    }
                }
            }
        }
    }
}

impl OdeSystem for GenericHierarchy {
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.derivative(y, dy);
    }
}
