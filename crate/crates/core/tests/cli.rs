use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ipmscale");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "seed = 5\n[sim]\nplots_per_bin = 10\nyears = 5\n";

fn fit_flags() -> [&'static str; 4] {
    ["--iterations", "500", "--burn-in", "100"]
}

fn simulate_small(dir: &Path) -> PathBuf {
    write(dir, "sim.toml", SMALL);
    let out = run(&["simulate", "--config", "sim.toml", "--out", "sim"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // Thin chains so short runs keep enough draws.
    let fit = dir.join("sim/fit.toml");
    let mut text = fs::read_to_string(&fit).unwrap();
    text = text.replace("thin = 10", "thin = 1");
    fs::write(&fit, text).unwrap();
    fit
}

#[test]
fn simulate_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    for f in ["patterns.csv", "climates.csv", "truth.toml", "fit.toml", "manifest.toml", "panel_summary.csv"] {
        assert!(dir.path().join("sim").join(f).is_file(), "{f}");
    }
    let climates = fs::read_to_string(dir.path().join("sim/climates.csv")).unwrap();
    assert!(climates.starts_with("plot_id,year,winter_temp_c,annual_precip_mm\n"));
    assert_eq!(climates.lines().count(), 1 + 40 * 5);
    let manifest = fs::read_to_string(dir.path().join("sim/manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"simulate\""));
    assert!(manifest.contains("sha256"));
}

#[test]
fn existing_output_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let again = run(&["simulate", "--config", "sim.toml", "--out", "sim"], dir.path());
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--overwrite"));
    let forced = run(&["simulate", "--config", "sim.toml", "--out", "sim", "--overwrite"], dir.path());
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
}

#[test]
fn bad_flags_and_files_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(&["simulate", "--config", "nope.toml", "--out", "o"], p)), 2);
    assert_eq!(code(&run(&["simulate", "--bins", "4y1", "--out", "o"], p)), 2);
    assert_eq!(code(&run(&["simulate", "--grid", "50,0,10", "--out", "o"], p)), 2);
    assert_eq!(code(&run(&["simulate", "--missing", "1.5", "--out", "o"], p)), 2);
    write(p, "typo.toml", "[mcmc]\niteratons = 5\n");
    assert_eq!(code(&run(&["simulate", "--config", "typo.toml", "--out", "o"], p)), 2);
    assert_eq!(code(&run(&["fit", "--out", "o"], p)), 2);
    assert!(!p.join("o").exists());
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "pat.csv", "plot_id,year,diameter_cm\nA,2005,3.0\nA,2005,abc\n");
    write(p, "clim.csv", "plot_id,year,winter_temp_c,annual_precip_mm\nA,2005,1.0,900\n");
    let out = run(&["fit", "--patterns", "pat.csv", "--climates", "clim.csv", "--out", "o"], p);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pat.csv:3:"), "{}", stderr(&out));
}

#[test]
fn empty_patterns_report_occupancy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "pat.csv", "plot_id,year,diameter_cm\nA,2005,\nA,2006,\nB,2005,\nB,2006,\n");
    write(
        p,
        "clim.csv",
        "plot_id,year,winter_temp_c,annual_precip_mm\nA,2005,1.0,900\nA,2006,1.5,910\nB,2005,2.0,950\nB,2006,2.5,960\n",
    );
    let out = run(&["fit", "--patterns", "pat.csv", "--climates", "clim.csv", "--bins", "1x1", "--out", "o"], p);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("occupancy"), "{err}");
    assert!(err.contains("year,bin,n_start"), "{err}");
}

#[test]
fn fit_project_summarize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let fit_cfg = simulate_small(p);
    let cfg = fit_cfg.to_str().unwrap();
    let mut args = vec!["fit", "--config", cfg, "--out", "fit"];
    args.extend(fit_flags());
    let out = run(&args, p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = String::from_utf8_lossy(&out.stdout);
    for name in ["Q1", "sigma", "delta0", "eta", "beta_temp", "sigma2_eps", "phi"] {
        assert!(report.contains(name), "{report}");
    }
    for f in ["chain_0.csv", "summary.csv", "acceptance.csv", "panel_summary.csv", "manifest.toml"] {
        assert!(p.join("fit").join(f).is_file(), "{f}");
    }
    let summary = fs::read_to_string(p.join("fit/summary.csv")).unwrap();
    assert!(summary.starts_with("param,mean,median,lower_2.5,upper_97.5,samples\n"));
    let manifest = fs::read_to_string(p.join("fit/manifest.toml")).unwrap();
    assert!(manifest.contains("[constraint]") && manifest.contains("rho_max"), "{manifest}");

    let out = run(&["project", "--config", cfg, "--fit-dir", "fit", "--out", "proj"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("truth containment"));
    let bands = fs::read_to_string(p.join("proj/bands.csv")).unwrap();
    assert_eq!(bands.lines().count(), 1 + 4 * 100);
    for line in bands.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[3] && v[3] <= v[4], "{line}");
    }

    let out = run(&["summarize", "--config", cfg, "--fit-dir", "fit", "--out", "summ"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let abundance = fs::read_to_string(p.join("summ/abundance.csv")).unwrap();
    assert!(abundance.starts_with("year,bin,observed_per_plot,predicted_mean,lower_2.5,upper_97.5\n"));
    assert!(abundance.lines().count() > 1);
}

#[test]
fn zero_horizon_projection_returns_start() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let fit_cfg = simulate_small(p);
    let text = fs::read_to_string(&fit_cfg).unwrap();
    assert!(text.contains("horizon = 9"));
    fs::write(&fit_cfg, text.replace("horizon = 9", "horizon = 0")).unwrap();
    let cfg = fit_cfg.to_str().unwrap();
    let mut args = vec!["fit", "--config", cfg, "--out", "fit"];
    args.extend(fit_flags());
    assert_eq!(code(&run(&args, p)), 0);
    let out = run(&["project", "--config", cfg, "--fit-dir", "fit", "--out", "proj"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bands = fs::read_to_string(p.join("proj/bands.csv")).unwrap();
    for line in bands.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[2], v[4], "{line}");
        assert_eq!(v[3], v[5], "{line}");
    }
}

#[test]
fn project_without_chains_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::create_dir(p.join("empty")).unwrap();
    let out = run(&["project", "--fit-dir", "empty", "--out", "proj"], p);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("manifest"));
}

#[test]
fn single_plot_fits_with_one_bin() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut pat = String::from("plot_id,year,diameter_cm\n");
    let mut clim = String::from("plot_id,year,winter_temp_c,annual_precip_mm\n");
    for (k, year) in (2005..2011).enumerate() {
        for i in 0..(20 + k) {
            pat.push_str(&format!("A,{year},{}\n", 5.0 + 1.7 * i as f64));
        }
        clim.push_str(&format!("A,{year},{},1000\n", 1.0 + 0.1 * k as f64));
    }
    write(p, "pat.csv", &pat);
    write(p, "clim.csv", &clim);
    write(p, "one.toml", "[mcmc]\nthin = 1\n[model]\ncovariates = \"temp_only\"\n");
    let mut args = vec![
        "fit", "--config", "one.toml", "--patterns", "pat.csv", "--climates", "clim.csv", "--bins", "1x1", "--out", "o",
    ];
    args.extend(fit_flags());
    let out = run(&args, p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
