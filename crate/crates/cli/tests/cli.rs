use std::fs;
use std::path::Path;
use std::process::Command;

use cooperative_decay::analysis::{resonance_deviation, DecayTrace};
use cooperative_decay::trace::{ColumnTable, ObservableTrace};
use cooperative_decay_cli::config::{load_run, RunConfig, SweepConfig};
use cooperative_decay_cli::manifest::{verify_dir, Manifest, Status};
use cooperative_decay_cli::presets::{emit_plot_data, PlotSource, Preset};
use cooperative_decay_cli::run::execute_run;
use cooperative_decay_cli::sweep::execute_sweep;

const BIN: &str = env!("CARGO_BIN_EXE_coopdecay");

fn run_config(lattice: &str, solver: &str, grid: &str, extra: &str) -> String {
    format!("schema_version = 1\nseed = 11\n{extra}\n[lattice]\n{lattice}\n\n[solver]\n{solver}\n\n[grid]\n{grid}\n")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn coopdecay(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, d: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut v = Vec::new();
    walk(dir, dir, &mut v);
    v.sort();
    v
}

const SMALL: &str = "rows = 3\ncols = 3\nspacing = 0.3";
const ALPHA2: &str = "kind = \"cumulant\"\nalpha = 2";

#[test]
fn single_atom_exact_run_decays_exponentially() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "one.toml",
        &run_config("rows = 1\ncols = 1\nspacing = 1.0", "kind = \"exact\"", "kind = \"uniform\"\nt_end = 5.0\nintervals = 50", ""),
    );
    let out = tmp.path().join("out");
    let (code, _, err) = coopdecay(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let trace = ObservableTrace::from_csv(&fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    for (t, n) in trace.times.iter().zip(&trace.n_excited) {
        assert!((n - (-t).exp()).abs() < 1e-8, "t={t}");
    }
    let decay = ColumnTable::parse(&fs::read_to_string(out.join("plots/decay.csv")).unwrap()).unwrap();
    assert_eq!(decay.headers, ["t_over_tau", "t_us", "N_e", "N_e_stderr"]);
    assert_eq!(decay.column("t_us").unwrap()[50], 100.0);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "r.toml",
        &run_config(
            "rows = 3\ncols = 3\nspacing = 0.3\nfill_probability = 0.8",
            ALPHA2,
            "kind = \"uniform\"\nt_end = 2.0\nintervals = 20",
            "realizations = 4\n[disorder]\nsigma = 0.02\n[analysis]\nfit_terms = 1\nbootstrap = 20\nsnapshot_times = [1.0]\n",
        ),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(coopdecay(&["--workers", "1", "run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(coopdecay(&["--workers", "3", "run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]).0, 0);
    assert_eq!(tree(&a), tree(&b));

    // The persisted config alone reproduces the bundle.
    let c = tmp.path().join("c");
    let persisted = a.join("config.toml");
    assert_eq!(coopdecay(&["run", persisted.to_str().unwrap(), "--out", c.to_str().unwrap()]).0, 0);
    assert_eq!(tree(&a), tree(&c));
    let (code, out, _) = coopdecay(&["verify", a.to_str().unwrap(), "--rerun"]);
    assert_eq!(code, 0, "{out}");
}

#[test]
fn verify_flags_tampering_with_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "r.toml", &run_config(SMALL, ALPHA2, "kind = \"uniform\"\nt_end = 1.0\nintervals = 10", ""));
    let out = tmp.path().join("out");
    assert_eq!(coopdecay(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 0);
    assert_eq!(coopdecay(&["verify", out.to_str().unwrap()]).0, 0);
    let path = out.join("trace.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("# edited\n");
    fs::write(&path, text).unwrap();
    let (code, _, err) = coopdecay(&["verify", out.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert!(err.contains("modified: trace.csv"), "{err}");
}

#[test]
fn config_errors_exit_2_with_a_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let src = run_config("rows = 3\ncols = 3\nspacing = -0.3", ALPHA2, "kind = \"standard\"", "");
    let cfg = write(tmp.path(), "bad.toml", &src);
    let (code, _, err) = coopdecay(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 4"), "{err}");

    let cfg = write(tmp.path(), "typo.toml", &src.replace("spacing = -0.3", "spacing = 0.3\nspcing = 1"));
    let (code, _, err) = coopdecay(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("spcing") && err.contains("line"), "{err}");
}

#[test]
fn solver_failures_exit_3_and_keep_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    // Some loadings exceed a cap of 4, others do not.
    let cfg = write(
        tmp.path(),
        "cap.toml",
        &run_config(
            "rows = 2\ncols = 3\nspacing = 0.4\nfill_probability = 0.7",
            "kind = \"exact\"\ncap = 4",
            "kind = \"uniform\"\nt_end = 0.5\nintervals = 5",
            "realizations = 6\n[analysis]\nfit_terms = 0\n",
        ),
    );
    let out = tmp.path().join("out");
    let (code, _, err) = coopdecay(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    let (m, v) = verify_dir(&out).unwrap();
    assert!(v.passed());
    assert_eq!(m.status, Status::Partial);
    assert!(m.failures.iter().any(|f| f.contains("cap")), "{:?}", m.failures);
    assert!(out.join("trace.csv").exists());
}

#[test]
fn burst_preset_shows_a_superradiant_peak() {
    let src = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/burst_10x10.toml")).unwrap();
    let (_, run) = load_run(&src).unwrap();
    let result = execute_run(&run);
    assert_eq!(result.bundle.manifest.status, Status::Ok);
    let rate = ColumnTable::parse(&result.bundle.files["plots/rate.csv"]).unwrap();
    let gamma = rate.column("gamma").unwrap();
    let peak = gamma.iter().copied().fold(f64::MIN, f64::max);
    assert!(peak > 1.0 && (gamma[0] - 1.0).abs() < 1e-9, "peak {peak}");
    let k = gamma.iter().position(|&g| g == peak).unwrap();
    assert!(k > 0 && k < gamma.len() - 1);
}

#[test]
fn product_state_correlation_grid_is_zero_off_centre() {
    let src = run_config(
        SMALL,
        "kind = \"exact\"",
        "kind = \"uniform\"\nt_end = 0.2\nintervals = 2",
        "[init]\nkind = \"incoherent\"\nexcitation_fraction = 0.5\n[analysis]\nfit_terms = 0\nregion = \"all\"\nsnapshot_times = [0.0]\n",
    );
    let (_, run) = load_run(&src).unwrap();
    let result = execute_run(&run);
    let grid = ColumnTable::parse(&result.bundle.files["plots/correlations_moments_t0.csv"]).unwrap();
    let rows = grid.raw_column("d_row\\d_col").unwrap();
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in grid.headers.iter().enumerate().skip(1) {
            let v: f64 = grid.rows[i][j].parse().unwrap();
            if *r == "0" && c == "0" {
                assert!((v - 1.0).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12, "({r},{c}) = {v}");
            }
        }
    }
}

#[test]
fn spin_preset_carries_the_independent_reference() {
    let src = run_config(
        "rows = 1\ncols = 2\nspacing = 50.0",
        "kind = \"exact\"",
        "kind = \"uniform\"\nt_end = 3.0\nintervals = 30",
        "[init]\nkind = \"coherent\"\nexcitation_fraction = 0.3\nphase_gradient = \"none\"\n[analysis]\nfit_terms = 0\n",
    );
    let (_, run) = load_run(&src).unwrap();
    let result = execute_run(&run);
    let t = ColumnTable::parse(&result.bundle.files["plots/spin_ssz.csv"]).unwrap();
    // Atoms fifty wavelengths apart decay almost independently.
    for (a, b) in [("S_z_per_N", "ref_S_z_per_N"), ("S_tot_per_N", "ref_S_tot_per_N")] {
        for (x, y) in t.column(a).unwrap().iter().zip(t.column(b).unwrap()) {
            assert!((x - y).abs() < 1e-2, "{a}: {x} vs {y}");
        }
    }
}

#[test]
fn presets_report_missing_prerequisites_by_name() {
    let (_, run) = load_run(&run_config(SMALL, ALPHA2, "kind = \"uniform\"\nt_end = 1.0\nintervals = 10", "")).unwrap();
    let result = execute_run(&run);
    let outputs = result.outputs.unwrap();
    let err = emit_plot_data(PlotSource::Run(&outputs), Preset::Correlations).unwrap_err();
    assert!(err.missing[0].contains("snapshot_times"));
    let err = emit_plot_data(PlotSource::Run(&outputs), Preset::Scaling).unwrap_err();
    assert!(err.to_string().contains("scaling"));
}

fn sweep_config(axis: &str, values: &str, base_extra: &str) -> String {
    format!(
        "schema_version = 1\n[sweep]\naxis = \"{axis}\"\nvalues = {values}\n\n[base]\nseed = 5\n{base_extra}\n[base.lattice]\n{SMALL}\n\n[base.solver]\n{ALPHA2}\n\n[base.grid]\nkind = \"uniform\"\nt_end = 2.0\nintervals = 40\n"
    )
}

#[test]
fn a_failing_sweep_point_leaves_the_others_untouched() {
    let with_bad = SweepConfig::from_toml(&sweep_config("spacing", "[-0.1, 0.3, 0.4]", "")).unwrap();
    let clean = SweepConfig::from_toml(&sweep_config("spacing", "[0.3, 0.4]", "")).unwrap();
    let a = execute_sweep(&with_bad);
    let b = execute_sweep(&clean);
    assert_eq!(a.bundle.manifest.status, Status::Partial);
    assert!(a.outputs.points[0].error.as_deref().unwrap().starts_with("config"));
    for (i, j) in [(1usize, 0usize), (2, 1)] {
        let pa = format!("point_{i:03}/");
        let pb = format!("point_{j:03}/");
        let fa: Vec<_> = a.bundle.files.iter().filter(|(k, _)| k.starts_with(&pa)).map(|(k, v)| (k[pa.len()..].to_string(), v)).collect();
        let fb: Vec<_> = b.bundle.files.iter().filter(|(k, _)| k.starts_with(&pb)).map(|(k, v)| (k[pb.len()..].to_string(), v)).collect();
        assert!(!fa.is_empty());
        assert_eq!(fa, fb);
    }
}

#[test]
fn single_value_spacing_sweep_is_one_deviation_call() {
    let cfg = SweepConfig::from_toml(&sweep_config("spacing", "[0.45]", "")).unwrap();
    let result = execute_sweep(&cfg);
    let point = &result.outputs.points[0];
    let run = point.run.as_ref().unwrap();
    let direct = resonance_deviation(
        &DecayTrace::new(run.trace.times.clone(), run.trace.n_excited.clone(), run.trace.n_atoms).unwrap(),
        1.0,
    )
    .unwrap();
    assert_eq!(point.deviation, Some(direct));
    assert!(result.bundle.files.contains_key("plots/spacing.csv"));
}

#[test]
fn lower_seeding_fraction_decays_faster_initially() {
    let extra = "[base.init]\nkind = \"coherent\"\nexcitation_fraction = 0.5\n[base.analysis]\nfit_terms = 0\n";
    let cfg = SweepConfig::from_toml(&sweep_config("excitation_fraction", "[0.9, 0.5, 0.2]", extra)).unwrap();
    let result = execute_sweep(&cfg);
    assert_eq!(result.bundle.manifest.status, Status::Ok);
    let g0: Vec<f64> = result.outputs.points.iter().map(|p| p.run.as_ref().unwrap().summary.gamma0).collect();
    assert!(g0[0] < g0[1] && g0[1] < g0[2], "{g0:?}");
    let ssz = ColumnTable::parse(&result.bundle.files["plots/spin_ssz.csv"]).unwrap();
    assert!(ssz.has("ref_S_tot_per_N"));
}

#[test]
fn atom_number_sweep_needs_four_points_for_an_exponent() {
    let cfg = SweepConfig::from_toml(&sweep_config("atom_number", "[4, 9, 16]", "")).unwrap();
    let result = execute_sweep(&cfg);
    assert!(result.outputs.scaling.is_empty());
    assert!(result.bundle.manifest.notes.iter().any(|n| n.contains("at least 4")));
    let cfg = SweepConfig::from_toml(&sweep_config("atom_number", "[4, 9, 16, 25]", "")).unwrap();
    let result = execute_sweep(&cfg);
    assert_eq!(result.outputs.scaling.len(), 3);
    assert!(result.outputs.scaling[0].exponent > 0.0);
}

#[test]
fn sweep_values_must_be_monotone() {
    let e = SweepConfig::from_toml(&sweep_config("spacing", "[0.3, 0.5, 0.4]", "")).unwrap_err();
    assert_eq!(e.path.as_deref(), Some("sweep.values"));
    assert_eq!(e.line, Some(4));
}

#[test]
fn spectrum_scan_and_fit_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let scan = write(
        tmp.path(),
        "scan.toml",
        "schema_version = 1\nseed = 2\nrealizations = 3\n[lattice]\nrows = 4\ncols = 4\n[scan]\nspacing_start = 0.3\nspacing_stop = 0.6\nspacing_step = 0.05\nsigmas = [0.0, 0.05]\n",
    );
    let out = tmp.path().join("scan");
    let (code, _, err) = coopdecay(&["spectrum-scan", scan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.join("spectrum_sigma0.05.csv").exists());
    assert_eq!(coopdecay(&["verify", out.to_str().unwrap(), "--rerun"]).0, 0);

    let cfg = write(tmp.path(), "r.toml", &run_config(SMALL, ALPHA2, "kind = \"standard\"", ""));
    let run = tmp.path().join("run");
    assert_eq!(coopdecay(&["run", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]).0, 0);
    let (code, report, err) = coopdecay(&["fit", run.join("trace.csv").to_str().unwrap(), "--terms", "2", "--deviation"]);
    assert_eq!(code, 0, "{err}");
    assert!(report.contains("term 1:") && report.contains("resonance_deviation"), "{report}");
    let (code, _, _) = coopdecay(&["fit", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn persisted_config_round_trips_through_the_manifest_hash() {
    let src = run_config(SMALL, ALPHA2, "kind = \"standard\"", "output_dir = \"somewhere\"\n");
    let c = RunConfig::from_toml(&src).unwrap();
    let (_, run) = load_run(&src).unwrap();
    let result = execute_run(&run);
    let m: Manifest = result.bundle.finalized_manifest();
    let persisted = &result.bundle.files["config.toml"];
    assert!(!persisted.contains("somewhere"));
    assert_eq!(persisted, &c.to_toml());
    let hash = m.files.iter().find(|(p, _)| p == "config.toml").unwrap().1.clone();
    assert_eq!(hash, m.config_sha256);
}

#[test]
fn book_configuration_example_resolves() {
    let chapter = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../book/src/runner.md")).unwrap();
    let start = chapter.find("```toml\n").unwrap() + "```toml\n".len();
    let block = &chapter[start..start + chapter[start..].find("```").unwrap()];
    let (config, run) = load_run(block).unwrap();
    assert_eq!(config.lattice.rows, 10);
    assert!(run.config.motion.is_some());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let ok = if text.contains("[sweep]") {
            SweepConfig::from_toml(&text).is_ok()
        } else if text.contains("[scan]") {
            cooperative_decay_cli::config::ScanConfig::from_toml(&text).is_ok()
        } else {
            load_run(&text).is_ok()
        };
        assert!(ok, "{}", path.display());
    }
}
