use cooperative_decay::analysis::{
    analytic_independent_spin, bootstrap_fit, connected_correlations, connected_correlations_from_shots, fit_stretched,
    spin_trajectory, DecayTrace, FitConstraints, Region, StretchedExpModel, StretchedTerm,
};
use cooperative_decay::couplings::{coupling_matrices, CouplingMatrices};
use cooperative_decay::exact::{evolve_exact, observables_exact, shot_bits, shot_sample, DensityMatrix, ExactOptions};
use cooperative_decay::geometry::{build_array, DisorderSpec, DriveGeometry, LatticeSpec};
use cooperative_decay::init::InitialStateSpec;
use cooperative_decay::ode::OdeOptions;
use cooperative_decay::trace::TimeGrid;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn grid(t_end: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| t_end * i as f64 / (points - 1) as f64).collect()
}

fn noisy(truth: &[f64], rel: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    truth.iter().map(|y| (y * (1.0 + rel * normal.sample(&mut rng))).max(0.0)).collect()
}

#[test]
fn noisy_single_exponential_recovers_timescale() {
    let ts = grid(5.0, 40);
    let truth: Vec<f64> = ts.iter().map(|t| 100.0 * (-t / 1.3).exp()).collect();
    for seed in 0..5 {
        let tr = DecayTrace::new(ts.clone(), noisy(&truth, 0.01, seed), 100).unwrap();
        let rep = fit_stretched(&tr, 1, &FitConstraints::default()).unwrap();
        let term = rep.model.terms[0];
        assert!((term.timescale - 1.3).abs() / 1.3 < 0.02, "{term:?}");
        assert!((term.exponent - 1.0).abs() < 0.05, "{term:?}");
    }
}

fn three_term_truth() -> StretchedExpModel {
    StretchedExpModel {
        terms: vec![
            StretchedTerm { amplitude: 55.0, timescale: 0.6, exponent: 1.8 },
            StretchedTerm { amplitude: 35.0, timescale: 1.2, exponent: 1.0 },
            StretchedTerm { amplitude: 10.0, timescale: 6.0, exponent: 0.6 },
        ],
    }
}

#[test]
fn three_term_curve_recovered_under_noise() {
    let truth = three_term_truth();
    let ts = grid(10.0, 80);
    let ys: Vec<f64> = ts.iter().map(|&t| truth.eval(t)).collect();
    let tr = DecayTrace::new(ts.clone(), noisy(&ys, 0.005, 11), 100).unwrap();
    let rep = fit_stretched(&tr, 3, &FitConstraints::default()).unwrap();
    let rms = (ts.iter().map(|&t| (rep.model.eval(t) - truth.eval(t)).powi(2)).sum::<f64>() / ts.len() as f64).sqrt();
    assert!(rms / truth.eval(0.0) < 0.01, "relative curve rms {}", rms / truth.eval(0.0));
}

#[test]
fn noiseless_three_term_data() {
    let truth = three_term_truth();
    let ts = grid(10.0, 80);
    let ys: Vec<f64> = ts.iter().map(|&t| truth.eval(t)).collect();
    let tr = DecayTrace::new(ts, ys, 100).unwrap();
    let rep = fit_stretched(&tr, 3, &FitConstraints::default()).unwrap();
    assert!(rep.residual_rms < 1e-6, "{}", rep.residual_rms);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn noiseless_two_term_data(a in 0.2f64..0.8, b1 in 0.3f64..1.0, c1 in 1.0f64..2.5, b2 in 2.0f64..8.0, c2 in 0.5f64..1.0) {
        let truth = StretchedExpModel {
            terms: vec![
                StretchedTerm { amplitude: 100.0 * a, timescale: b1, exponent: c1 },
                StretchedTerm { amplitude: 100.0 * (1.0 - a), timescale: b2, exponent: c2 },
            ],
        };
        let ts = grid(8.0, 60);
        let ys: Vec<f64> = ts.iter().map(|&t| truth.eval(t)).collect();
        let tr = DecayTrace::new(ts, ys, 100).unwrap();
        for n in [2, 3] {
            let rep = fit_stretched(&tr, n, &FitConstraints::default()).unwrap();
            prop_assert!(rep.residual_rms < 1e-6, "n = {}: rms {}", n, rep.residual_rms);
        }
    }
}

/// Fraction of (dataset, time) cells whose one-sigma band covers the true curve.
fn bootstrap_coverage(datasets: u64, resamples: usize) -> f64 {
    let ts = grid(4.0, 30);
    let truth: Vec<f64> = ts.iter().map(|t| 50.0 * (-t / 1.1).exp()).collect();
    let mut hits = 0usize;
    let mut cells = 0usize;
    let normal = Normal::new(0.0, 0.5).unwrap();
    for d in 0..datasets {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + d);
        let ys: Vec<f64> = truth.iter().map(|y| y + normal.sample(&mut rng)).collect();
        let tr = DecayTrace::new(ts.clone(), ys, 50).unwrap();
        let rep = bootstrap_fit(&tr, 1, &FitConstraints::default(), resamples, d).unwrap();
        let b = rep.bootstrap.unwrap();
        for k in 0..ts.len() {
            cells += 1;
            if b.curve_lower[k] <= truth[k] && truth[k] <= b.curve_upper[k] {
                hits += 1;
            }
        }
    }
    hits as f64 / cells as f64
}

#[test]
fn bootstrap_band_is_roughly_one_sigma() {
    let cov = bootstrap_coverage(40, 200);
    assert!((0.55..=0.80).contains(&cov), "coverage {cov}");
}

#[test]
fn shot_bootstrap_runs() {
    let ts = grid(3.0, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shots: Vec<Vec<f64>> = ts
        .iter()
        .map(|t| {
            let p = (-t).exp();
            let bin = rand_distr::Binomial::new(40, p).unwrap();
            (0..50).map(|_| bin.sample(&mut rng) as f64).collect()
        })
        .collect();
    let tr = DecayTrace::from_shots(ts, shots, 40).unwrap();
    let rep = bootstrap_fit(&tr, 1, &FitConstraints::default(), 100, 9).unwrap();
    let b = rep.bootstrap.unwrap();
    assert_eq!(b.failed, 0);
    assert!(b.curve_lower.iter().zip(&b.curve_upper).all(|(l, u)| l <= u));
    assert!((rep.model.terms[0].timescale - 1.0).abs() < 0.1);
}

#[test]
fn moment_and_shot_correlations_agree_on_exact_state() {
    let arr = build_array(&LatticeSpec::square(1, 6, 0.316), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    let opts = ExactOptions {
        state_times: vec![0.5],
        ..ExactOptions::default()
    };
    let run = evolve_exact(&InitialStateSpec::fully_inverted(), &arr, &cm, &TimeGrid::uniform(0.5, 10), &opts).unwrap();
    let rho = &run.states[0].1;
    let obs = observables_exact(rho, &cm).unwrap();
    let sites = arr.occupied_sites();
    let moments = connected_correlations(&sites, &obs.populations, &obs.pair_populations, &Region::All).unwrap();
    let shots: Vec<Vec<bool>> = shot_sample(rho, 1_000_000, 77).unwrap().into_iter().map(|s| shot_bits(s, 6)).collect();
    let sampled = connected_correlations_from_shots(&sites, &shots, &Region::All).unwrap();
    assert_eq!(moments.displacements, sampled.displacements);
    for k in 0..moments.c_d.len() {
        let se = sampled.stderr.as_ref().unwrap()[k];
        let diff = (moments.c_d[k] - sampled.c_d[k]).abs();
        assert!(diff < 5.0 * se + 1e-12, "d = {:?}: {} vs {} (se {se})", moments.displacements[k], moments.c_d[k], sampled.c_d[k]);
    }
    // Nearest neighbours of a decaying inverted chain bunch their decays.
    assert!(moments.get([0, 1]).unwrap() > 0.0);
}

#[test]
fn product_state_has_no_off_site_correlations() {
    let n = 4;
    let rho = DensityMatrix::product(&[0.3, 0.6, 0.9, 0.5], &[Complex64::new(0.0, 0.0); 4]);
    let obs = observables_exact(&rho, &CouplingMatrices::independent(n)).unwrap();
    let sites: Vec<[i64; 2]> = (0..n as i64).map(|c| [0, c]).collect();
    let map = connected_correlations(&sites, &obs.populations, &obs.pair_populations, &Region::All).unwrap();
    for (k, d) in map.displacements.iter().enumerate() {
        if *d != [0, 0] {
            assert!(map.c_d[k].abs() < 1e-14);
        }
    }
}

fn independent_product(theta: f64, t: f64, n: usize) -> DensityMatrix {
    let p = theta.sin().powi(2) * (-t).exp();
    let m = theta.sin() * theta.cos() * (-t / 2.0).exp();
    DensityMatrix::product(&vec![p; n], &vec![Complex64::new(m, 0.0); n])
}

#[test]
fn spin_assembly_matches_analytic_independent_decay() {
    let n = 5;
    for theta in [0.3, 0.9, 1.4] {
        for t in [0.0, 0.4, 1.3, 4.0] {
            let obs = observables_exact(&independent_product(theta, t, n), &CouplingMatrices::independent(n)).unwrap();
            let (sz, s2) = analytic_independent_spin(theta, n, (-t).exp());
            assert!((obs.s_z - sz).abs() < 1e-10);
            assert!((obs.m2 + obs.s_z_sq - s2).abs() < 1e-10, "{} vs {s2}", obs.m2 + obs.s_z_sq);
        }
    }
}

#[test]
fn integrated_independent_decay_matches_analytic_spin() {
    let n = 4;
    let theta = 0.8f64;
    let arr = build_array(&LatticeSpec::square(1, n, 3.0), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap();
    let opts = ExactOptions {
        ode: OdeOptions::new(1e-11, 1e-13),
        ..ExactOptions::default()
    };
    let init = InitialStateSpec::coherent(2.0 * theta, None);
    let run = evolve_exact(&init, &arr, &CouplingMatrices::independent(n), &TimeGrid::uniform(4.0, 40), &opts).unwrap();
    let traj = spin_trajectory(&run.trace).unwrap();
    for (k, &t) in traj.times.iter().enumerate() {
        let (sz, s2) = analytic_independent_spin(theta, n, (-t).exp());
        assert!((traj.s_z[k] - sz).abs() < 1e-8);
        assert!((traj.s_tot[k].powi(2) - s2).abs() < 1e-8);
        assert!(traj.s_tot[k] >= traj.s_z[k].abs());
    }
}

#[test]
fn spin_of_extreme_product_states() {
    let n = 6;
    let nf = n as f64;
    let excited = DensityMatrix::basis_state(n, (1 << n) - 1);
    let obs = observables_exact(&excited, &CouplingMatrices::independent(n)).unwrap();
    assert!((obs.s_z - nf / 2.0).abs() < 1e-14 && (obs.m2 - nf / 2.0).abs() < 1e-14);
    let ground = DensityMatrix::basis_state(n, 0);
    let obs = observables_exact(&ground, &CouplingMatrices::independent(n)).unwrap();
    assert!((obs.s_z + nf / 2.0).abs() < 1e-14 && (obs.m2 - nf / 2.0).abs() < 1e-14);
}

fn cumulant_trace(n: usize, spacing: f64, grid: &TimeGrid) -> cooperative_decay::trace::ObservableTrace {
    use cooperative_decay::cumulant::{evolve_cumulant, ClosureOrder, CumulantOptions};
    let arr = build_array(&LatticeSpec::square(n, n, spacing), &DisorderSpec::none(), &DriveGeometry::default(), 0).unwrap();
    let cm = coupling_matrices(&arr, None).unwrap();
    evolve_cumulant(
        &InitialStateSpec::fully_inverted(),
        &arr,
        &cm,
        ClosureOrder::new(2, false).unwrap(),
        grid,
        &CumulantOptions::default(),
    )
    .unwrap()
    .trace
}

#[test]
fn three_term_fit_of_simulated_array_shows_burst_and_tail() {
    use cooperative_decay::analysis::normalized_rate_from_fit;
    let trace = cumulant_trace(10, 0.316, &TimeGrid::standard());
    let dt = DecayTrace::from(&trace);
    let rep = fit_stretched(&dt, 3, &FitConstraints::default()).unwrap();
    let gamma = normalized_rate_from_fit(&dt, &rep.model).unwrap();
    let peak = gamma.iter().copied().filter(|g| g.is_finite()).fold(f64::MIN, f64::max);
    assert!(peak > 1.0, "peak {peak}");
    assert!(*gamma.last().unwrap() < 1.0);
    assert!(rep.residual_rms / dt.n_excited[0] < 5e-3, "{}", rep.residual_rms);
}

#[test]
fn resonance_deviation_peaks_just_above_half_wavelength() {
    use cooperative_decay::analysis::resonance_deviation;
    let grid = TimeGrid::uniform(2.0, 40);
    let dev = |a: f64| resonance_deviation(&DecayTrace::from(&cumulant_trace(12, a, &grid)), 1.0).unwrap();
    let (below, peak, above) = (dev(0.48), dev(0.54), dev(0.6));
    assert!(peak > below && peak > above, "{below} {peak} {above}");
}
