use cooperative_decay::couplings::{coupling_matrices, pair_couplings, CouplingMatrices};
use cooperative_decay::exact::{
    evolve_density, evolve_exact, lindblad_rhs, observables_exact, shot_bits, shot_sample, DensityMatrix, ExactOptions,
};
use cooperative_decay::geometry::{build_array, dicke_array, dipole_vector, DisorderSpec, DriveGeometry, LatticeSpec};
use cooperative_decay::init::InitialStateSpec;
use cooperative_decay::trace::TimeGrid;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn chain(n: usize, spacing: f64) -> cooperative_decay::geometry::AtomArray {
    build_array(&LatticeSpec::square(1, n, spacing), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap()
}

#[test]
fn single_atom_decay() {
    let arr = chain(1, 0.3);
    let cm = coupling_matrices(&arr, None).unwrap();
    let run = evolve_exact(&InitialStateSpec::fully_inverted(), &arr, &cm, &TimeGrid::uniform(5.0, 100), &ExactOptions::default())
        .unwrap();
    let worst = run
        .trace
        .times
        .iter()
        .zip(&run.trace.n_excited)
        .map(|(t, n)| (n - (-t).exp()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
}

/// Four-level solution: |ee⟩ feeds the symmetric and antisymmetric single-excitation
/// states, which decay with rates γ0 ± Γ12.
fn two_atom_closed_form(t: f64, g12: f64) -> f64 {
    let channel = |r: f64| {
        if (r - 2.0).abs() < 1e-12 {
            2.0 * t * (-2.0 * t).exp()
        } else {
            r * ((-2.0 * t).exp() - (-r * t).exp()) / (r - 2.0)
        }
    };
    2.0 * (-2.0 * t).exp() + channel(1.0 + g12) + channel(1.0 - g12)
}

#[test]
fn two_atoms_match_closed_form() {
    for spacing in [0.1, 0.2, 0.316, 0.5] {
        let arr = chain(2, spacing);
        let cm = coupling_matrices(&arr, None).unwrap();
        let g12 = cm.gamma[[0, 1]];
        let run =
            evolve_exact(&InitialStateSpec::fully_inverted(), &arr, &cm, &TimeGrid::uniform(5.0, 50), &ExactOptions::default())
                .unwrap();
        for (t, n) in run.trace.times.iter().zip(&run.trace.n_excited) {
            let want = two_atom_closed_form(*t, g12);
            assert!((n - want).abs() < 1e-6, "a={spacing} t={t}: {n} vs {want}");
        }
    }
}

#[test]
fn two_atom_closed_form_starts_at_single_atom_rate() {
    let h = 1e-6;
    let slope = (two_atom_closed_form(h, 0.4) - two_atom_closed_form(0.0, 0.4)) / h;
    assert!((two_atom_closed_form(0.0, 0.4) - 2.0).abs() < 1e-15);
    assert!((slope + 2.0).abs() < 1e-4, "{slope}");
}

fn ladder_excitations(n: usize, times: &[f64]) -> Vec<f64> {
    let s = n as f64 / 2.0;
    // Level k holds k excitations, m = k − S.
    let rate = |k: usize| {
        let m = k as f64 - s;
        (s + m) * (s - m + 1.0)
    };
    let deriv = |p: &[f64]| -> Vec<f64> {
        (0..=n)
            .map(|k| -rate(k) * p[k] + if k < n { rate(k + 1) * p[k + 1] } else { 0.0 })
            .collect()
    };
    let mut p = vec![0.0; n + 1];
    p[n] = 1.0;
    let dt: f64 = 1e-4;
    let mut t = 0.0;
    let mut out = Vec::new();
    for &target in times {
        while t < target - 1e-12 {
            let h = dt.min(target - t);
            let k1 = deriv(&p);
            let y2: Vec<f64> = p.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let k2 = deriv(&y2);
            let y3: Vec<f64> = p.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let k3 = deriv(&y3);
            let y4: Vec<f64> = p.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let k4 = deriv(&y4);
            for k in 0..=n {
                p[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
            t += h;
        }
        out.push(p.iter().enumerate().map(|(k, x)| k as f64 * x).sum());
    }
    out
}

#[test]
fn dicke_six_matches_ladder() {
    let arr = dicke_array(6, &DriveGeometry::default()).unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    let grid = TimeGrid::uniform(5.0, 50);
    let run = evolve_exact(&InitialStateSpec::fully_inverted(), &arr, &cm, &grid, &ExactOptions::default()).unwrap();
    let want = ladder_excitations(6, &grid.times);
    for ((t, n), w) in grid.times.iter().zip(&run.trace.n_excited).zip(&want) {
        assert!((n - w).abs() < 1e-6, "t={t}: {n} vs {w}");
    }
}

#[test]
fn two_atom_coherence_equation() {
    // d⟨σ1†σ2⟩/dt = −γ0⟨σ1†σ2⟩ + K12*(2⟨n1n2⟩ − ⟨n2⟩) + K12(2⟨n1n2⟩ − ⟨n1⟩), K = Γ/2 + iJ.
    let e = dipole_vector(&DriveGeometry::default());
    let (j12, g12) = pair_couplings([0.23, 0.05, 0.0], &e).unwrap();
    let cm = CouplingMatrices::from_parts(
        ndarray::arr2(&[[0.0, j12], [j12, 0.0]]),
        ndarray::arr2(&[[1.0, g12], [g12, 1.0]]),
    )
    .unwrap();
    let psi = [c(0.3, 0.1), c(0.5, -0.2), c(-0.1, 0.6), c(0.4, 0.3)];
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let psi: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
    let rho = DensityMatrix::from_pure(2, &psi).unwrap();
    let drho = lindblad_rhs(&rho, &cm).unwrap();
    let o = observables_exact(&rho, &cm).unwrap();
    // ⟨σ_0†σ_1⟩ = ρ(|e_1⟩, |e_0⟩).
    let d_c12 = drho.get(2, 1);
    let k = c(0.5 * g12, j12);
    let d11 = o.pair_populations[[0, 1]];
    let want = -o.coherences[[0, 1]] + k.conj() * (2.0 * d11 - o.populations[1]) + k * (2.0 * d11 - o.populations[0]);
    assert!((d_c12 - want).norm() < 1e-13, "{d_c12} vs {want}");
}

fn kron_operator(n: usize, site_ops: &[(usize, DMatrix<Complex64>)]) -> DMatrix<Complex64> {
    let mut op = DMatrix::from_element(1, 1, c(1.0, 0.0));
    // Most significant atom first so that atom 0 is the lowest bit.
    for atom in (0..n).rev() {
        let mut local = DMatrix::identity(2, 2);
        for (s, m) in site_ops {
            if *s == atom {
                local = &local * m;
            }
        }
        op = op.kronecker(&local);
    }
    op
}

#[test]
fn pair_observables_match_operator_traces() {
    let arr = chain(4, 0.25);
    let cm = coupling_matrices(&arr, None).unwrap();
    let opts = ExactOptions {
        state_times: vec![0.5],
        ..ExactOptions::default()
    };
    let run = evolve_exact(&InitialStateSpec::incoherent(0.9), &arr, &cm, &TimeGrid::uniform(0.5, 5), &opts).unwrap();
    let rho = &run.states[0].1;
    let dim = rho.dim();
    let r = DMatrix::from_fn(dim, dim, |y, z| rho.get(y, z));
    // |g⟩ = index 0, |e⟩ = index 1; σ = |g⟩⟨e|.
    let sigma = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let sigma_dag = sigma.adjoint();
    let ne = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let o = observables_exact(rho, &cm).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let nn = kron_operator(4, &[(i, ne.clone()), (j, ne.clone())]);
            let want = (&r * nn).trace();
            assert!((o.pair_populations[[i, j]] - want.re).abs() < 1e-12);
            if i != j {
                let op = kron_operator(4, &[(i, sigma_dag.clone()), (j, sigma.clone())]);
                let want = (&r * op).trace();
                assert!((o.coherences[[i, j]] - want).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn trajectory_invariants() {
    let arr = build_array(&LatticeSpec::square(2, 3, 0.2), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    let grid = TimeGrid::uniform_then_log(5.0, 0.25, 20.0, 6);
    let checkpoints = vec![0.0, 1.0, 5.0, 20.0];
    let opts = ExactOptions {
        state_times: checkpoints.clone(),
        ..ExactOptions::default()
    };
    let run = evolve_exact(&InitialStateSpec::incoherent(0.96), &arr, &cm, &grid, &opts).unwrap();
    assert!(run.max_trace_drift <= 1e-7, "{}", run.max_trace_drift);
    assert_eq!(run.states.len(), checkpoints.len());
    for (t, rho) in &run.states {
        rho.check_physical().unwrap_or_else(|e| panic!("t={t}: {e}"));
        // −dN_e/dt equals the photon flux.
        let d = lindblad_rhs(rho, &cm).unwrap();
        let dn: f64 = d.diagonal().iter().enumerate().map(|(y, p)| y.count_ones() as f64 * p).sum();
        let o = observables_exact(rho, &cm).unwrap();
        assert!((-dn - o.emission_rate).abs() < 1e-12, "t={t}");
    }
    for w in run.trace.n_excited.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn inverted_state_starts_at_single_atom_rate() {
    let arr = build_array(&LatticeSpec::square(3, 3, 0.15), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    let rho = DensityMatrix::basis_state(9, (1 << 9) - 1);
    let o = observables_exact(&rho, &cm).unwrap();
    assert!((o.emission_rate / o.n_excited - 1.0).abs() < 1e-14);
    assert_eq!(o.m2, 4.5);
    assert_eq!(o.s_z, 4.5);
    let g = observables_exact(&DensityMatrix::basis_state(9, 0), &cm).unwrap();
    assert_eq!(g.emission_rate, 0.0);
    assert_eq!(g.s_z, -4.5);
    assert!(g.populations.iter().all(|&p| p == 0.0));
}

#[test]
fn permutation_covariance() {
    let arr = build_array(&LatticeSpec::square(2, 2, 0.27), &DisorderSpec::gaussian(0.05, 4), &DriveGeometry::default(), 4)
        .unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    let perm = [2, 0, 3, 1];
    let pops = [0.9, 0.5, 0.7, 0.2];
    let cohs = [c(0.1, 0.2), c(0.3, -0.1), c(0.0, 0.4), c(-0.2, 0.1)];
    let grid = TimeGrid::uniform(1.0, 4);
    let a = evolve_density(DensityMatrix::product(&pops, &cohs), &cm, &grid, &ExactOptions {
        snapshot_times: vec![1.0],
        ..ExactOptions::default()
    })
    .unwrap();
    let pp: Vec<f64> = perm.iter().map(|&k| pops[k]).collect();
    let pc: Vec<Complex64> = perm.iter().map(|&k| cohs[k]).collect();
    let b = evolve_density(DensityMatrix::product(&pp, &pc), &cm.permuted(&perm), &grid, &ExactOptions {
        snapshot_times: vec![1.0],
        ..ExactOptions::default()
    })
    .unwrap();
    let (sa, sb) = (&a.trace.snapshots[0], &b.trace.snapshots[0]);
    for x in 0..4 {
        assert!((sa.populations[perm[x]] - sb.populations[x]).abs() < 1e-7);
        for y in 0..4 {
            assert!((sa.coherences[[perm[x], perm[y]]] - sb.coherences[[x, y]]).norm() < 1e-7);
        }
    }
}

#[test]
fn global_phase_leaves_populations_invariant() {
    let arr = chain(3, 0.2);
    let cm = coupling_matrices(&arr, None).unwrap();
    let grid = TimeGrid::uniform(1.5, 3);
    let opts = ExactOptions {
        snapshot_times: vec![1.5],
        ..ExactOptions::default()
    };
    let base = [c(0.3, 0.1), c(0.2, -0.2), c(0.0, 0.4)];
    let shift = Complex64::from_polar(1.0, 1.1);
    let rotated: Vec<Complex64> = base.iter().map(|z| z * shift).collect();
    let pops = [0.5, 0.4, 0.6];
    let a = evolve_density(DensityMatrix::product(&pops, &base), &cm, &grid, &opts).unwrap();
    let b = evolve_density(DensityMatrix::product(&pops, &rotated), &cm, &grid, &opts).unwrap();
    let (sa, sb) = (&a.trace.snapshots[0], &b.trace.snapshots[0]);
    for i in 0..3 {
        assert!((sa.populations[i] - sb.populations[i]).abs() < 1e-8);
        for j in 0..3 {
            assert!((sa.coherences[[i, j]].norm() - sb.coherences[[i, j]].norm()).abs() < 1e-8);
        }
    }
}

#[test]
fn shots_of_inverted_state_are_all_ones() {
    let rho = DensityMatrix::basis_state(5, 31);
    for s in shot_sample(&rho, 100, 3).unwrap() {
        assert_eq!(s, 31);
        assert!(shot_bits(s, 5).into_iter().all(|b| b));
    }
}

#[test]
fn shot_marginals_follow_binomial() {
    let rho = DensityMatrix::product(&[0.5; 4], &[c(0.0, 0.0); 4]);
    let shots = 100_000;
    let samples = shot_sample(&rho, shots, 11).unwrap();
    let sigma = (0.25 / shots as f64).sqrt();
    for i in 0..4 {
        let mean = samples.iter().filter(|s| *s >> i & 1 == 1).count() as f64 / shots as f64;
        assert!((mean - 0.5).abs() < 5.0 * sigma, "site {i}: {mean}");
    }
    assert_eq!(samples, shot_sample(&rho, shots, 11).unwrap());
}

#[test]
fn dark_state_shots_are_one_hot() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rho = DensityMatrix::from_pure(2, &[c(0.0, 0.0), c(h, 0.0), c(-h, 0.0), c(0.0, 0.0)]).unwrap();
    for s in shot_sample(&rho, 5000, 1).unwrap() {
        assert_eq!(s.count_ones(), 1);
    }
}

#[test]
fn decoupled_rhs_is_sum_of_single_atom_dissipators() {
    let n = 3;
    let rho = DensityMatrix::product(&[0.8, 0.3, 0.6], &[c(0.2, 0.1), c(0.1, 0.0), c(-0.3, 0.2)]);
    let d = lindblad_rhs(&rho, &CouplingMatrices::independent(n)).unwrap();
    // Independent decay keeps the state a product: populations p e^{−t}, coherences m e^{−t/2}.
    let o = observables_exact(&rho, &CouplingMatrices::independent(n)).unwrap();
    let dim = rho.dim();
    let r = DMatrix::from_fn(dim, dim, |y, z| rho.get(y, z));
    let dr = DMatrix::from_fn(dim, dim, |y, z| d.get(y, z));
    let sigma = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let mut want = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..n {
        let s = kron_operator(n, &[(i, sigma.clone())]);
        let sd = s.adjoint();
        want += &s * &r * &sd - (&sd * &s * &r + &r * &sd * &s) * c(0.5, 0.0);
    }
    assert!((dr - want).norm() < 1e-13);
    assert!((o.n_excited - 1.7).abs() < 1e-14);
}
