//! End-to-end tests of the `stable-cir` binary and the command functions.

use std::path::Path;
use std::process::Command;

use stable_cir::cir::{mean, PathGrid};
use stable_cir::frac_moment_m;
use stable_cir_harness::check::CheckOptions;
use stable_cir_harness::commands::{self, cmd_check, cmd_diagnose, cmd_simulate, path_file_name};
use stable_cir_harness::config::ExperimentConfig;
use stable_cir_harness::mc::replication_seed;
use stable_cir_harness::HarnessError;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stable-cir"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

fn config(out: &Path, body: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse_str(body).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn simulate_writes_one_file_per_replication() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_grid=16\nreps=1\nmaster_seed=7\n");
    let files = cmd_simulate(&cfg).unwrap();
    assert_eq!(files.len(), 1);
    let seed = replication_seed(7, 16, 0);
    assert_eq!(files[0], dir.path().join(path_file_name(seed, 16)));
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count(), 18);
    assert_eq!(text.lines().next(), Some("i,t,x"));
    let csvs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 1);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = "n_grid=16,64\nreps=3\nmaster_seed=11\n";
    let fa = cmd_simulate(&config(a.path(), body)).unwrap();
    let fb = cmd_simulate(&config(b.path(), body)).unwrap();
    assert_eq!(fa.len(), 6);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        assert_eq!(
            std::fs::read(x.with_extension("meta")).unwrap(),
            std::fs::read(y.with_extension("meta")).unwrap()
        );
    }
}

#[test]
fn zero_noise_simulation_follows_the_drift_ode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "theta0=2,1,0,1.5\nn_grid=16\nreps=1\nsubsteps=64\n",
    );
    let files = cmd_simulate(&cfg).unwrap();
    let path = PathGrid::read_csv(&files[0]).unwrap();
    for (i, x) in path.obs.iter().enumerate() {
        let exact = mean(&cfg.theta0, 1.0, i as f64 / 16.0);
        assert!(
            (x - exact).abs() < 2.0 / (16.0 * 64.0),
            "i {i}: {x} vs {exact}"
        );
    }
}

#[test]
fn estimate_reads_simulated_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_grid=500\nreps=2\n");
    cmd_simulate(&cfg).unwrap();
    let (records, failures) = commands::cmd_estimate(&cfg).unwrap();
    assert_eq!(records.len() + failures.len(), 2);
    let text = std::fs::read_to_string(dir.path().join(commands::ESTIMATES_CSV)).unwrap();
    assert_eq!(
        text.lines().next(),
        Some(stable_cir::estimators::CSV_HEADER)
    );
    assert_eq!(text.lines().count(), 1 + records.len());

    let empty = tempfile::tempdir().unwrap();
    let cfg = config(empty.path(), "");
    assert!(matches!(
        commands::cmd_estimate(&cfg),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn diagnose_rejects_an_empty_grid() {
    assert!(matches!(
        ExperimentConfig::parse_str("n_grid=\n"),
        Err(HarnessError::Config(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "");
    cfg.n_grid.clear();
    assert!(matches!(cmd_diagnose(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn diagnose_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_grid=250,1000\nreps=20\n");
    let rep = cmd_diagnose(&cfg).unwrap();
    assert_eq!(rep.slopes.len(), 2);
    assert_eq!(rep.increments.len(), 4);
    assert_eq!(rep.inverse.len(), 2);
    for f in [
        commands::INCREMENTS_CSV,
        commands::SLOPES_CSV,
        commands::INVERSE_CSV,
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let slopes = std::fs::read_to_string(dir.path().join(commands::SLOPES_CSV)).unwrap();
    assert_eq!(
        slopes.lines().next(),
        Some("p,exponent,target,abs_err,pass")
    );
}

fn read_report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(commands::CHECK_JSON)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn check_passes_on_a_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let rep = cmd_check(&cfg, &CheckOptions::default()).unwrap();
    assert!(rep.passed);
    let json = read_report(dir.path());
    assert_eq!(json["passed"], true);
    let checks = json["checks"].as_array().unwrap();
    assert_eq!(checks.len(), rep.checks.len());
    for c in checks {
        for key in ["name", "value", "tolerance", "pass"] {
            assert!(c.get(key).is_some(), "{c}");
        }
    }
}

fn perturbed_m(p: f64, alpha: f64) -> Result<f64, stable_cir::StableError> {
    Ok(frac_moment_m(p, alpha)? * 1.02)
}

#[test]
fn check_detects_a_perturbed_fractional_moment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let opts = CheckOptions {
        m_p: perturbed_m,
        ..CheckOptions::default()
    };
    let err = cmd_check(&cfg, &opts).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let json = read_report(dir.path());
    assert_eq!(json["passed"], false);
    let failed: Vec<&str> = json["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(!failed.is_empty());
    assert!(
        failed.iter().all(|n| n.starts_with("frac_moment")),
        "{failed:?}"
    );
}

#[test]
fn check_survives_tenfold_tighter_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "tol_scale=0.1\n");
    let rep = cmd_check(&cfg, &CheckOptions::default()).unwrap();
    let norm: Vec<_> = rep
        .checks
        .iter()
        .filter(|c| c.name.starts_with("normalization"))
        .collect();
    assert_eq!(norm.len(), 3);
    for c in norm {
        assert!(c.pass && c.tolerance == 1e-7, "{c:?}");
    }
}

#[test]
fn density_table_columns() {
    let out = bin()
        .args([
            "density-table",
            "--alpha",
            "1.5",
            "--from",
            "-1",
            "--to",
            "1",
            "--step",
            "0.5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,phi,h,k,f");
    assert_eq!(lines.len(), 6);
    let zero: Vec<f64> = lines[3].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(zero[0], 0.0);
    // k = 1 + x h is exactly one at the origin.
    assert_eq!(zero[3], 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["simulate", "--out", out, "--n", "4"]), Some(1));
    let bad = write_config(dir.path(), "reps=0\n");
    assert_eq!(
        code(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]),
        Some(1)
    );
    let clash = write_config(dir.path(), "mode=mc\n");
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            clash.to_str().unwrap(),
            "--out",
            out
        ]),
        Some(1)
    );
    assert_eq!(code(&["estimate", "--out", out]), Some(1));

    // A drift that pushes the state past the overflow guard.
    let blowup = write_config(dir.path(), "theta0=1,-1000,0.5,1.5\nn_grid=8\nreps=1\n");
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            blowup.to_str().unwrap(),
            "--out",
            out
        ]),
        Some(2)
    );

    let good = write_config(dir.path(), "n_grid=16\nreps=2\nmaster_seed=3\n");
    assert_eq!(
        code(&[
            "simulate",
            "--config",
            good.to_str().unwrap(),
            "--out",
            out,
            "--seed",
            "5",
            "--reps",
            "1"
        ]),
        Some(0)
    );
    let seed = replication_seed(5, 16, 0);
    assert!(dir.path().join(path_file_name(seed, 16)).exists());
}
