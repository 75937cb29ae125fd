//! Monte Carlo replications, per-replication records and summaries.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stable_cir::cir::{ls_slope, simulate_path, PathGrid};
use stable_cir::estimators::{estimate_full, EstimConfig, EstimationResult, LawCache, CSV_HEADER};
use stable_cir::rng::derive_seed;
use stable_cir::Theta;

use crate::config::ExperimentConfig;
use crate::HarnessError;

pub const PARAMS: [&str; 4] = ["a", "b", "delta", "alpha"];

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Runs above this failure fraction are reported as numerical failures.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// Seed of replication `rep` at observation count `n`.
pub fn replication_seed(master_seed: u64, n: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(master_seed, n as u64), rep as u64)
}

pub fn simulate_replication(
    cfg: &ExperimentConfig,
    n: usize,
    rep: usize,
) -> Result<PathGrid, HarnessError> {
    let seed = replication_seed(cfg.master_seed, n, rep);
    simulate_path(&cfg.theta0, cfg.x0, n, cfg.substeps, seed).map_err(|e| {
        HarnessError::Numerical(format!("replication {rep} (n = {n}, seed {seed}): {e}"))
    })
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub outcome: Result<EstimationResult, String>,
}

/// Simulates and estimates every `(n, rep)` pair of the configuration. The
/// result is ordered by `(n_grid index, rep)` whatever the scheduling.
pub fn run_replications(cfg: &ExperimentConfig) -> Vec<Replication> {
    let laws = LawCache::new();
    let estim: EstimConfig = cfg.estim_config();
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    jobs.par_iter()
        .map(|&(n, rep)| {
            let seed = replication_seed(cfg.master_seed, n, rep);
            let outcome = simulate_replication(cfg, n, rep)
                .map_err(|e| e.to_string())
                .and_then(|path| estimate_full(&path, &estim, &laws).map_err(|e| e.to_string()));
            Replication {
                n,
                rep,
                seed,
                outcome,
            }
        })
        .collect()
}

/// One row of the per-replication CSV and JSON-lines outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub seed: u64,
    pub n: usize,
    pub a_hat: f64,
    pub b_hat: f64,
    pub delta_hat: f64,
    pub alpha_hat: f64,
    pub a_pre: f64,
    pub b_pre: f64,
    pub delta_pre: f64,
    pub alpha_pre: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub se_delta: f64,
    pub se_alpha: f64,
    pub clamps: usize,
    pub iters: usize,
}

impl From<&EstimationResult> for ReplicationRecord {
    fn from(e: &EstimationResult) -> Self {
        let (t1, t0, se) = (&e.theta_onestep, &e.theta_prelim, &e.stderr);
        Self {
            seed: e.seed,
            n: e.n,
            a_hat: t1.a,
            b_hat: t1.b,
            delta_hat: t1.delta,
            alpha_hat: t1.alpha,
            a_pre: t0.a,
            b_pre: t0.b,
            delta_pre: t0.delta,
            alpha_pre: t0.alpha,
            se_a: se[0],
            se_b: se[1],
            se_delta: se[2],
            se_alpha: se[3],
            clamps: e.clamps(),
            iters: e.drift_iters,
        }
    }
}

impl ReplicationRecord {
    pub fn onestep(&self) -> [f64; 4] {
        [self.a_hat, self.b_hat, self.delta_hat, self.alpha_hat]
    }

    pub fn prelim(&self) -> [f64; 4] {
        [self.a_pre, self.b_pre, self.delta_pre, self.alpha_pre]
    }

    pub fn stderr(&self) -> [f64; 4] {
        [self.se_a, self.se_b, self.se_delta, self.se_alpha]
    }
}

/// Failed replication, kept for the failure log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seed: u64,
    pub n: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub param: String,
    pub count: usize,
    pub bias: f64,
    pub median_abs_err: f64,
    pub rmse: f64,
    pub std: f64,
    /// Least-squares slope of `ln std` on `ln n` across the grid.
    pub rate_slope: f64,
    /// Fraction of `θ̂ ± 1.96 se` intervals containing the truth.
    pub coverage: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Bias, median absolute error, RMSE and sample standard deviation of the
/// errors `est - truth`.
pub fn error_stats(estimates: &[f64], truth: f64) -> (f64, f64, f64, f64) {
    let m = estimates.len() as f64;
    let errs: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    let bias = errs.iter().sum::<f64>() / m;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
    let std = (errs.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / (m - 1.0)).sqrt();
    let mut abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
    (bias, median(&mut abs), rmse, std)
}

/// Per-`(n, parameter)` summary of successful replications. Rows follow
/// `n_grid` order, then [`PARAMS`].
pub fn summarize(
    records: &[ReplicationRecord],
    theta0: &Theta,
    n_grid: &[usize],
) -> Vec<SummaryRow> {
    let truth = theta0.to_array();
    let mut rows = Vec::new();
    for &n in n_grid {
        let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.n == n).collect();
        for (k, name) in PARAMS.iter().enumerate() {
            let est: Vec<f64> = group.iter().map(|r| r.onestep()[k]).collect();
            let (bias, median_abs_err, rmse, std) = error_stats(&est, truth[k]);
            let covered = group
                .iter()
                .filter(|r| (r.onestep()[k] - truth[k]).abs() <= Z95 * r.stderr()[k])
                .count();
            rows.push(SummaryRow {
                n,
                param: name.to_string(),
                count: group.len(),
                bias,
                median_abs_err,
                rmse,
                std,
                rate_slope: f64::NAN,
                coverage: covered as f64 / group.len() as f64,
            });
        }
    }
    for param in PARAMS {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.param == param && r.std > 0.0)
            .map(|r| ((r.n as f64).ln(), r.std.ln()))
            .collect();
        let slope = if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            ls_slope(&x, &y)
        } else {
            f64::NAN
        };
        for r in rows.iter_mut().filter(|r| r.param == param) {
            r.rate_slope = slope;
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| HarnessError::io(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Splits replications into records and failures, preserving order.
pub fn partition(reps: &[Replication]) -> (Vec<ReplicationRecord>, Vec<FailureRecord>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in reps {
        match &r.outcome {
            Ok(e) => ok.push(ReplicationRecord::from(e)),
            Err(msg) => failed.push(FailureRecord {
                seed: r.seed,
                n: r.n,
                rep: r.rep,
                error: msg.clone(),
            }),
        }
    }
    (ok, failed)
}

/// Output file names written by `mc`.
pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const REPLICATIONS_JSONL: &str = "replications.jsonl";
pub const FAILURES_CSV: &str = "failures.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Writes the per-replication CSV (columns [`CSV_HEADER`]), its JSON-lines
/// twin, the failure log and `summary.csv`.
pub fn write_outputs(
    out_dir: &Path,
    records: &[ReplicationRecord],
    failures: &[FailureRecord],
    summary: &[SummaryRow],
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let path = out_dir.join(REPLICATIONS_CSV);
    if records.is_empty() {
        std::fs::write(&path, format!("{CSV_HEADER}\n")).map_err(|e| HarnessError::io(&path, e))?;
    } else {
        write_csv(&path, records)?;
    }
    write_jsonl(&out_dir.join(REPLICATIONS_JSONL), records)?;
    write_csv(&out_dir.join(FAILURES_CSV), failures)?;
    write_csv(&out_dir.join(SUMMARY_CSV), summary)
}

/// Errors when more than [`MAX_FAILURE_FRACTION`] of the replications failed.
pub fn check_failure_rate(total: usize, failures: &[FailureRecord]) -> Result<(), HarnessError> {
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        let first = failures.first().map(|f| f.error.as_str()).unwrap_or("");
        return Err(HarnessError::Numerical(format!(
            "{} of {total} replications failed (first: {first})",
            failures.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_error_stats() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let (bias, med, rmse, std) = error_stats(&[1.0, 2.0, 4.0], 2.0);
        assert!((bias - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(med, 1.0);
        assert!((rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((std - (7.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse >= bias.abs());
    }

    #[test]
    fn record_columns_match_the_core_header() {
        let rec = ReplicationRecord {
            seed: 1,
            n: 8,
            a_hat: 0.0,
            b_hat: 0.0,
            delta_hat: 0.0,
            alpha_hat: 0.0,
            a_pre: 0.0,
            b_pre: 0.0,
            delta_pre: 0.0,
            alpha_pre: 0.0,
            se_a: 0.0,
            se_b: 0.0,
            se_delta: 0.0,
            se_alpha: 0.0,
            clamps: 0,
            iters: 0,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&rec).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        let json = serde_json::to_string(&rec).unwrap();
        let pos: Vec<usize> = CSV_HEADER
            .split(',')
            .map(|k| json.find(&format!("\"{k}\":")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
    }

    #[test]
    fn failure_threshold() {
        let f = |k: usize| {
            (0..k)
                .map(|i| FailureRecord {
                    seed: i as u64,
                    n: 8,
                    rep: i,
                    error: "x".into(),
                })
                .collect::<Vec<_>>()
        };
        assert!(check_failure_rate(100, &f(10)).is_ok());
        assert!(check_failure_rate(100, &f(11)).is_err());
    }
}
