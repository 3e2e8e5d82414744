//! Free-space dyadic Green's tensor at the transition wavelength.
//!
//! With lengths measured in λ the wavenumber is `k = 2π`, and
//!
//! ```text
//! G(r) = k/(4π) · [A(kr)·I + B(kr)·r̂⊗r̂]
//! A(x) = e^{ix} (1/x + i/x² − 1/x³)
//! B(x) = e^{ix} (−1/x − 3i/x² + 3/x³)
//! ```
//!
//! The imaginary parts of `A` and `B` are regular at the origin but the closed
//! forms lose digits to cancellation there, so below `x = 0.5` they are summed
//! from their Taylor series instead.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{norm, Vec3};

pub const WAVENUMBER: f64 = TAU;

pub type Tensor3 = [[Complex64; 3]; 3];

const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: usize = 10;

/// Imaginary parts of the scalar functions `A(x)` and `B(x)`.
fn imag_parts(x: f64) -> (f64, f64) {
    if x < SERIES_CUTOFF {
        // Im A = Σ_{n≥1} (−1)^n [−1/(2n−1)! + 1/(2n)! − 1/(2n+1)!] x^{2n−2}
        // Im B = Σ_{n≥1} (−1)^n [ 1/(2n−1)! − 3/(2n)! + 3/(2n+1)!] x^{2n−2}
        let mut im_a = 0.0;
        let mut im_b = 0.0;
        let mut fact = 1.0; // (2n-1)!
        let mut pow = 1.0; // x^{2n-2}
        let x2 = x * x;
        for n in 1..=SERIES_TERMS {
            let two_n = 2.0 * n as f64;
            let f_odd = fact; // (2n-1)!
            let f_even = fact * two_n; // (2n)!
            let f_next = f_even * (two_n + 1.0); // (2n+1)!
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            im_a += sign * (-1.0 / f_odd + 1.0 / f_even - 1.0 / f_next) * pow;
            im_b += sign * (1.0 / f_odd - 3.0 / f_even + 3.0 / f_next) * pow;
            pow *= x2;
            fact = f_next;
        }
        (im_a, im_b)
    } else {
        let (s, c) = x.sin_cos();
        let x2 = x * x;
        let x3 = x2 * x;
        let im_a = s / x + c / x2 - s / x3;
        let im_b = -s / x - 3.0 * c / x2 + 3.0 * s / x3;
        (im_a, im_b)
    }
}

fn real_parts(x: f64) -> (f64, f64) {
    let (s, c) = x.sin_cos();
    let x2 = x * x;
    let x3 = x2 * x;
    let re_a = c / x - s / x2 - c / x3;
    let re_b = -c / x + 3.0 * s / x2 + 3.0 * c / x3;
    (re_a, re_b)
}

/// Dyadic Green's tensor for separation `r` (units of λ). Rejects `r = 0`.
pub fn green_tensor(r: Vec3) -> Result<Tensor3> {
    let dist = norm(r);
    if !(dist > 0.0) {
        return Err(Error::InvalidParameter(
            "Green's tensor is singular at zero separation".into(),
        ));
    }
    let x = WAVENUMBER * dist;
    let (re_a, re_b) = real_parts(x);
    let (im_a, im_b) = imag_parts(x);
    let pref = WAVENUMBER / (4.0 * PI);
    let a = Complex64::new(re_a, im_a) * pref;
    let b = Complex64::new(re_b, im_b) * pref;
    let rh = [r[0] / dist, r[1] / dist, r[2] / dist];
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            a * delta + b * (rh[i] * rh[j])
        })
    }))
}

/// `d† M d` for a complex 3-vector `d`.
pub fn sandwich(d: &[Complex64; 3], m: &Tensor3) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            acc += d[i].conj() * m[i][j] * d[j];
        }
    }
    acc
}

/// Coherent and dissipative couplings `(J, Γ)` in units of γ0 for one pair.
///
/// `J − iΓ/2 = −(3π/k)·d†G d`; with `k = 2π` the prefactor is `−3/2`. This sets
/// `Γ → γ0` as the separation goes to zero and makes the co-located symmetric
/// mode superradiant.
pub fn pair_couplings(r: Vec3, dipole: &[Complex64; 3]) -> Result<(f64, f64)> {
    let g = green_tensor(r)?;
    let dgd = sandwich(dipole, &g);
    let scale = 3.0 * PI / WAVENUMBER;
    Ok((-scale * dgd.re, 2.0 * scale * dgd.im))
}
