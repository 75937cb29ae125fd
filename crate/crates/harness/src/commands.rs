//! The CLI modes. Each command reads an [`ExperimentConfig`] and writes its
//! outputs under `out_dir`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stable_cir::cir::{increment_diagnostics, inverse_moments, PathGrid};
use stable_cir::estimators::{estimate_full, LawCache};
use stable_cir::StableLaw;

use crate::check::{run_suite, CheckOptions, CheckReport};
use crate::config::ExperimentConfig;
use crate::mc::{self, FailureRecord, ReplicationRecord, SummaryRow};
use crate::HarnessError;

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Config(format!("out_dir {}: {e}", dir.display())))
}

/// File name of a simulated path.
pub fn path_file_name(seed: u64, n: usize) -> String {
    format!("path_{seed}_{n}.csv")
}

/// Writes `path_<seed>_<n>.csv` (with its `.meta` sidecar) for every
/// replication and returns the files in `(n_grid, rep)` order.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    ensure_dir(&cfg.out_dir)?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    jobs.par_iter()
        .map(|&(n, rep)| {
            let path = mc::simulate_replication(cfg, n, rep)?;
            let file = cfg.out_dir.join(path_file_name(path.seed, n));
            path.write_csv(&file)
                .map_err(|e| HarnessError::io(&file, e))?;
            Ok(file)
        })
        .collect()
}

pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const ESTIMATES_JSONL: &str = "estimates.jsonl";
pub const ESTIMATE_FAILURES_CSV: &str = "estimate_failures.csv";

/// `path_*.csv` files in `dir`, sorted by name.
pub fn path_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            name.starts_with("path_") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Runs the full estimation pipeline on every `path_*.csv` in `out_dir`.
pub fn cmd_estimate(
    cfg: &ExperimentConfig,
) -> Result<(Vec<ReplicationRecord>, Vec<FailureRecord>), HarnessError> {
    let files = path_files(&cfg.out_dir)?;
    if files.is_empty() {
        return Err(HarnessError::Config(format!(
            "no path_*.csv files in {}",
            cfg.out_dir.display()
        )));
    }
    let paths: Vec<PathGrid> = files
        .iter()
        .map(|f| PathGrid::read_csv(f).map_err(|e| HarnessError::io(f, e)))
        .collect::<Result<_, _>>()?;
    let laws = LawCache::new();
    let estim = cfg.estim_config();
    let outcomes: Vec<_> = paths
        .par_iter()
        .map(|p| estimate_full(p, &estim, &laws))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, (path, out)) in paths.iter().zip(outcomes).enumerate() {
        match out {
            Ok(e) => records.push(ReplicationRecord::from(&e)),
            Err(e) => failures.push(FailureRecord {
                seed: path.seed,
                n: path.n,
                rep,
                error: format!("{}: {e}", files[rep].display()),
            }),
        }
    }
    mc::write_csv(&cfg.out_dir.join(ESTIMATES_CSV), &records)?;
    mc::write_jsonl(&cfg.out_dir.join(ESTIMATES_JSONL), &records)?;
    mc::write_csv(&cfg.out_dir.join(ESTIMATE_FAILURES_CSV), &failures)?;
    mc::check_failure_rate(paths.len(), &failures)?;
    Ok((records, failures))
}

#[derive(Debug, Clone)]
pub struct McOutput {
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<FailureRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Simulates and estimates every replication, then writes the
/// per-replication files and `summary.csv`.
pub fn cmd_mc(cfg: &ExperimentConfig) -> Result<McOutput, HarnessError> {
    ensure_dir(&cfg.out_dir)?;
    let reps = mc::run_replications(cfg);
    let (records, failures) = mc::partition(&reps);
    let summary = mc::summarize(&records, &cfg.theta0, &cfg.n_grid);
    mc::write_outputs(&cfg.out_dir, &records, &failures, &summary)?;
    mc::check_failure_rate(reps.len(), &failures)?;
    Ok(McOutput {
        records,
        failures,
        summary,
    })
}

/// Moment orders of the increment regression.
pub const INCREMENT_ORDERS: [f64; 2] = [0.5, 1.0];
/// Order of the inverse-moment table.
pub const INVERSE_ORDER: f64 = 2.0;
/// Largest accepted distance between the fitted exponent and `p/α`.
pub const EXPONENT_TOL: f64 = 0.1;
/// Largest accepted ratio between successive inverse moments along `n`.
pub const INVERSE_GROWTH_TOL: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTableRow {
    pub p: f64,
    pub n: usize,
    pub moment: f64,
    pub count: usize,
}

/// One fitted increment exponent: `E|ΔX|^p ≈ C n^{-exponent}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub p: f64,
    pub exponent: f64,
    pub target: f64,
    pub abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseRow {
    pub q: f64,
    pub n: usize,
    pub moment: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub increments: Vec<MomentTableRow>,
    pub slopes: Vec<SlopeRow>,
    pub inverse: Vec<InverseRow>,
    /// Largest ratio of consecutive inverse moments along the grid.
    pub inverse_growth: f64,
}

impl DiagnoseReport {
    pub fn slopes_pass(&self) -> bool {
        self.slopes.iter().all(|s| s.pass)
    }

    pub fn inverse_bounded(&self) -> bool {
        self.inverse.iter().all(|r| r.moment.is_finite())
            && self.inverse_growth <= INVERSE_GROWTH_TOL
    }
}

pub const INCREMENTS_CSV: &str = "increment_moments.csv";
pub const SLOPES_CSV: &str = "increment_slopes.csv";
pub const INVERSE_CSV: &str = "inverse_moments.csv";

/// Increment-moment regressions for `p ∈ {0.5, 1}` and the inverse-moment
/// table over `reps` simulated paths per `n`.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseReport, HarnessError> {
    cfg.validate()?;
    if cfg.n_grid.len() < 2 {
        return Err(HarnessError::Config(
            "diagnose needs at least two n_grid entries".into(),
        ));
    }
    ensure_dir(&cfg.out_dir)?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let paths: Vec<PathGrid> = jobs
        .par_iter()
        .map(|&(n, rep)| mc::simulate_replication(cfg, n, rep))
        .collect::<Result<_, _>>()?;

    let alpha = cfg.theta0.alpha;
    let mut increments = Vec::new();
    let mut slopes = Vec::new();
    for p in INCREMENT_ORDERS {
        let rep =
            increment_diagnostics(&paths, p).map_err(|e| HarnessError::Numerical(e.to_string()))?;
        increments.extend(rep.rows.iter().map(|r| MomentTableRow {
            p,
            n: r.n,
            moment: r.moment,
            count: r.count,
        }));
        let exponent = -rep.slope;
        let target = p / alpha;
        let abs_err = (exponent - target).abs();
        slopes.push(SlopeRow {
            p,
            exponent,
            target,
            abs_err,
            pass: abs_err <= EXPONENT_TOL,
        });
    }
    let inverse: Vec<InverseRow> = inverse_moments(&paths, INVERSE_ORDER)
        .into_iter()
        .map(|r| InverseRow {
            q: INVERSE_ORDER,
            n: r.n,
            moment: r.moment,
            count: r.count,
        })
        .collect();
    let inverse_growth = inverse
        .windows(2)
        .map(|w| w[1].moment / w[0].moment)
        .fold(f64::NEG_INFINITY, f64::max);

    mc::write_csv(&cfg.out_dir.join(INCREMENTS_CSV), &increments)?;
    mc::write_csv(&cfg.out_dir.join(SLOPES_CSV), &slopes)?;
    mc::write_csv(&cfg.out_dir.join(INVERSE_CSV), &inverse)?;
    Ok(DiagnoseReport {
        increments,
        slopes,
        inverse,
        inverse_growth,
    })
}

pub const CHECK_JSON: &str = "check.json";

/// Runs the invariant suite and writes `check.json`; any failing check
/// turns into [`HarnessError::CheckFailed`] after the report is written.
pub fn cmd_check(cfg: &ExperimentConfig, opts: &CheckOptions) -> Result<CheckReport, HarnessError> {
    ensure_dir(&cfg.out_dir)?;
    let opts = CheckOptions {
        tol_scale: cfg.tol_scale,
        seed: cfg.master_seed,
        ..*opts
    };
    let report = run_suite(&cfg.theta0, cfg.x0, cfg.substeps, &opts);
    let file = cfg.out_dir.join(CHECK_JSON);
    let text = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::io(&file, e))?;
    std::fs::write(&file, text + "\n").map_err(|e| HarnessError::io(&file, e))?;
    if !report.passed {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err(HarnessError::CheckFailed(names.join("; ")));
    }
    Ok(report)
}

/// Writes `x,phi,h,k,f` on the grid `from, from + step, ..., <= to`.
pub fn density_table(
    alpha: f64,
    from: f64,
    to: f64,
    step: f64,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    if !(step > 0.0 && from <= to) {
        return Err(HarnessError::Config(format!(
            "bad grid from={from} to={to} step={step}"
        )));
    }
    let law = StableLaw::new(alpha).map_err(|e| HarnessError::Config(e.to_string()))?;
    let io = |e: std::io::Error| HarnessError::Io(e.to_string());
    writeln!(out, "x,phi,h,k,f").map_err(io)?;
    let count = ((to - from) / step + 1e-9).floor() as usize;
    for i in 0..=count {
        let x = from + i as f64 * step;
        let j = law
            .jet(x)
            .map_err(|e| HarnessError::Numerical(format!("x = {x}: {e}")))?;
        writeln!(out, "{x},{},{},{},{}", j.density(), j.h, j.k(), j.f).map_err(io)?;
    }
    Ok(())
}
