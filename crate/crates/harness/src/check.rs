//! Invariant checks shared by the `check` command and the acceptance suite.
//!
//! Deterministic checks compare a measured error with an absolute or
//! relative tolerance. Monte Carlo checks report the error in standard-error
//! units and compare it with a multiple of the standard error.

use nalgebra::{Matrix4, Vector4};
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stable_cir::cir::{laplace_transform, simulate_path, simulate_with};
use stable_cir::estimators::{quasi_loglik, rate_matrix, score, score_report};
use stable_cir::quadrature::QuadConfig;
use stable_cir::rng::stream;
use stable_cir::{PathGrid, StableError, StableLaw, Theta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    /// `"abs"`, `"rel"` or `"se"` (error in standard errors).
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckItem {
    pub fn new(name: impl Into<String>, metric: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            metric: metric.into(),
            value,
            tolerance,
            pass: value.abs() <= tolerance,
            note: None,
        }
    }

    /// A check that could not be evaluated.
    pub fn error(
        name: impl Into<String>,
        metric: &str,
        tolerance: f64,
        err: impl ToString,
    ) -> Self {
        Self {
            name: name.into(),
            metric: metric.into(),
            value: f64::NAN,
            tolerance,
            pass: false,
            note: Some(err.to_string()),
        }
    }
}

pub type FracMoment = fn(f64, f64) -> Result<f64, StableError>;

/// Normalisation of the density: `|∫φ - 1|`.
pub fn normalization(law: &StableLaw, tol: f64) -> CheckItem {
    let name = format!("normalization alpha={}", law.alpha());
    match law.expectation(|_| 1.0, 0.0) {
        Ok(v) => CheckItem::new(name, "abs", v - 1.0, tol),
        Err(e) => CheckItem::error(name, "abs", tol, e),
    }
}

/// `E h`, `E k`, `E f`.
pub fn kernel_means(law: &StableLaw, tol: f64) -> Vec<CheckItem> {
    let names = ["E[h]", "E[k]", "E[f]"];
    let alpha = law.alpha();
    match law.expectation_jet(|j| [j.h, j.k(), j.f], 0.0) {
        Ok(v) => names
            .iter()
            .zip(v)
            .map(|(n, e)| CheckItem::new(format!("{n} alpha={alpha}"), "abs", e, tol))
            .collect(),
        Err(e) => names
            .iter()
            .map(|n| CheckItem::error(format!("{n} alpha={alpha}"), "abs", tol, &e))
            .collect(),
    }
}

/// The six integration-by-parts connections between the kernels, each
/// written as an expectation that vanishes.
pub fn connection_identities(law: &StableLaw, tol: f64) -> Vec<CheckItem> {
    let names = [
        "E[h'] = -E[h^2]",
        "E[f'] = -E[fh]",
        "E[d_alpha f] = -E[f^2]",
        "E[k'] = -E[hk]",
        "E[x f'] = -E[fk]",
        "E[x k'] = -E[k^2]",
    ];
    let alpha = law.alpha();
    let res = law.expectation_jet(
        |j| {
            let (x, k) = (j.x, j.k());
            [
                j.dh + j.h * j.h,
                j.df + j.f * j.h,
                j.fa + j.f * j.f,
                j.dk() + j.h * k,
                x * j.df + j.f * k,
                x * j.dk() + k * k,
            ]
        },
        0.0,
    );
    match res {
        Ok(v) => names
            .iter()
            .zip(v)
            .map(|(n, e)| CheckItem::new(format!("{n} alpha={alpha}"), "abs", e, tol))
            .collect(),
        Err(e) => names
            .iter()
            .map(|n| CheckItem::error(format!("{n} alpha={alpha}"), "abs", tol, &e))
            .collect(),
    }
}

/// Sample mean and standard error.
pub fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    (mean, (var.max(0.0) / n).sqrt())
}

fn se_units(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn draws(alpha: f64, seed: u64, count: usize) -> Vec<f64> {
    let sampler = stable_cir::stable::StableSampler::new(alpha);
    sampler.sample_iter(stream(seed, 0)).take(count).collect()
}

/// Empirical characteristic function of `count` sampler draws against the
/// closed form at each `u`; the value is the larger of the real and
/// imaginary errors in standard errors.
pub fn char_fn_check(
    law: &StableLaw,
    us: &[f64],
    count: usize,
    seed: u64,
    sigmas: f64,
) -> Vec<CheckItem> {
    let xs = draws(law.alpha(), seed, count);
    us.iter()
        .map(|&u| {
            let phi = law.char_fn(u);
            let (re, se_re) = mean_and_se(xs.iter().map(|x| (u * x).cos()));
            let (im, se_im) = mean_and_se(xs.iter().map(|x| (u * x).sin()));
            let z = se_units(re - phi.re, se_re).max(se_units(im - phi.im, se_im));
            CheckItem::new(
                format!("char_fn alpha={} u={u}", law.alpha()),
                "se",
                z,
                sigmas,
            )
        })
        .collect()
}

/// `E|L - L'|^p` over `pairs` independent pairs against `m_p(α)`.
pub fn frac_moment_check(
    alpha: f64,
    p: f64,
    pairs: usize,
    seed: u64,
    m_p: FracMoment,
    sigmas: f64,
) -> CheckItem {
    let name = format!("frac_moment p={p} alpha={alpha}");
    let expected = match m_p(p, alpha) {
        Ok(v) => v,
        Err(e) => return CheckItem::error(name, "se", sigmas, e),
    };
    let xs = draws(alpha, seed, 2 * pairs);
    let (m, se) = mean_and_se(xs.chunks_exact(2).map(|d| (d[0] - d[1]).abs().powf(p)));
    CheckItem::new(name, "se", se_units(m - expected, se), sigmas)
}

/// Paths simulated per random stream in [`laplace_oracle_check`].
const PATHS_PER_BLOCK: usize = 1000;

/// Monte Carlo `E exp(-u X_t)` from `paths` simulated paths on an `n`-point
/// observation grid against the closed-form Laplace transform. Every `t`
/// must be a multiple of `1/n`.
#[allow(clippy::too_many_arguments)]
pub fn laplace_oracle_check(
    theta: &Theta,
    x0: f64,
    times: &[f64],
    us: &[f64],
    paths: usize,
    n: usize,
    substeps: usize,
    seed: u64,
    sigmas: f64,
    quad: &QuadConfig,
) -> Vec<CheckItem> {
    let cells: Vec<(f64, f64)> = times
        .iter()
        .flat_map(|&t| us.iter().map(move |&u| (t, u)))
        .collect();
    let name = |t: f64, u: f64| format!("laplace t={t} u={u}");
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| (t * n as f64).round() as usize)
        .collect();
    let blocks = paths.div_ceil(PATHS_PER_BLOCK);
    let sums: Result<Vec<Vec<[f64; 2]>>, _> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let mut acc = vec![[0.0; 2]; cells.len()];
            let count = PATHS_PER_BLOCK.min(paths - b * PATHS_PER_BLOCK);
            for _ in 0..count {
                let (obs, _) = simulate_with(theta, x0, n, substeps, &mut rng)?;
                for (c, &(_, u)) in cells.iter().enumerate() {
                    let v = (-u * obs[idx[c / us.len()]]).exp();
                    acc[c][0] += v;
                    acc[c][1] += v * v;
                }
            }
            Ok::<_, stable_cir::CirError>(acc)
        })
        .collect();
    let sums = match sums {
        Ok(s) => s,
        Err(e) => {
            return cells
                .iter()
                .map(|&(t, u)| CheckItem::error(name(t, u), "se", sigmas, &e))
                .collect()
        }
    };
    let m = paths as f64;
    cells
        .iter()
        .enumerate()
        .map(|(c, &(t, u))| {
            let (s, s2) = sums
                .iter()
                .fold((0.0, 0.0), |(a, b), blk| (a + blk[c][0], b + blk[c][1]));
            let mean = s / m;
            let se = ((s2 / m - mean * mean).max(0.0) * m / (m - 1.0) / m).sqrt();
            match laplace_transform(theta, x0, t, u, quad) {
                Ok(exact) => CheckItem::new(name(t, u), "se", se_units(mean - exact, se), sigmas),
                Err(e) => CheckItem::error(name(t, u), "se", sigmas, e),
            }
        })
        .collect()
}

fn law_at(alpha: f64, quad: &QuadConfig) -> Result<StableLaw, StableError> {
    StableLaw::with_config(alpha, *quad)
}

/// Central differences of `L_n` (for the score) and of the score (for the
/// hessian) with steps `1e-3` times the diagonal of the rate matrix.
pub fn fd_derivatives(
    path: &PathGrid,
    theta: &Theta,
    quad: &QuadConfig,
) -> Result<(Vector4<f64>, Matrix4<f64>), String> {
    let u = rate_matrix(path.n, theta).map_err(|e| e.to_string())?;
    let mut g = Vector4::zeros();
    let mut j = Matrix4::zeros();
    for k in 0..4 {
        let h = 1e-3 * u[(k, k)].abs();
        let mut up = theta.to_array();
        let mut dn = theta.to_array();
        up[k] += h;
        dn[k] -= h;
        let (tu, td) = (Theta::from_array(up), Theta::from_array(dn));
        let (lu, ld) = (
            law_at(tu.alpha, quad).map_err(|e| e.to_string())?,
            law_at(td.alpha, quad).map_err(|e| e.to_string())?,
        );
        let ll = |t: &Theta, l: &StableLaw| {
            quasi_loglik(path, t, l)
                .map(|v| v.0)
                .map_err(|e| e.to_string())
        };
        let sc = |t: &Theta, l: &StableLaw| score(path, t, l).map_err(|e| e.to_string());
        g[k] = -(ll(&tu, &lu)? - ll(&td, &ld)?) / (2.0 * h);
        j.set_column(k, &((sc(&tu, &lu)? - sc(&td, &ld)?) / (2.0 * h)));
    }
    Ok((g, j))
}

/// Analytic score and hessian against finite differences on `path`. The
/// hessian error of entry `(r, c)` is relative to
/// `max(|J_rc|, 1e-3 sqrt|J_rr J_cc|)` so that near-zero off-diagonal
/// entries are judged on the scale of the matrix.
pub fn gradient_check(
    path: &PathGrid,
    theta: &Theta,
    rel_tol: f64,
    quad: &QuadConfig,
) -> Vec<CheckItem> {
    let names = ["score vs fd(loglik)", "hessian vs fd(score)"];
    let run = || -> Result<(f64, f64), String> {
        let law = law_at(theta.alpha, quad).map_err(|e| e.to_string())?;
        let rep = score_report(path, theta, &law).map_err(|e| e.to_string())?;
        let (fg, fj) = fd_derivatives(path, theta, quad)?;
        let g_err = (0..4)
            .map(|k| (rep.g[k] - fg[k]).abs() / fg[k].abs())
            .fold(0.0, f64::max);
        let mut j_err = 0.0f64;
        for r in 0..4 {
            for c in 0..4 {
                let scale = fj[(r, c)]
                    .abs()
                    .max(1e-3 * (fj[(r, r)] * fj[(c, c)]).abs().sqrt());
                j_err = j_err.max((rep.j[(r, c)] - fj[(r, c)]).abs() / scale);
            }
        }
        Ok((g_err, j_err))
    };
    match run() {
        Ok((g, j)) => vec![
            CheckItem::new(names[0], "rel", g, rel_tol),
            CheckItem::new(names[1], "rel", j, rel_tol),
        ],
        Err(e) => names
            .iter()
            .map(|n| CheckItem::error(*n, "rel", rel_tol, &e))
            .collect(),
    }
}

/// Sizes and tolerances of the `check` command.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Multiplies the quadrature tolerances and the quadrature-based check
    /// tolerances (normalisation, kernel means, identities).
    pub tol_scale: f64,
    pub seed: u64,
    pub m_p: FracMoment,
    pub alphas: [f64; 3],
    pub draws: usize,
    pub laplace_paths: usize,
    pub laplace_n: usize,
    pub fd_n: usize,
    pub sigmas: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            tol_scale: 1.0,
            seed: 1,
            m_p: stable_cir::frac_moment_m,
            alphas: [1.2, 1.5, 1.8],
            draws: 200_000,
            laplace_paths: 4000,
            laplace_n: 32,
            fd_n: 200,
            sigmas: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub tol_scale: f64,
    pub checks: Vec<CheckItem>,
}

impl CheckReport {
    pub fn new(tol_scale: f64, checks: Vec<CheckItem>) -> Self {
        Self {
            passed: checks.iter().all(|c| c.pass),
            tol_scale,
            checks,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Runs the full invariant suite at the sizes in `opts`. The Laplace and
/// gradient checks use `theta0`, `x0` and `substeps` of the experiment.
pub fn run_suite(theta0: &Theta, x0: f64, substeps: usize, opts: &CheckOptions) -> CheckReport {
    let quad = QuadConfig::default().scaled(opts.tol_scale);
    let s = opts.tol_scale;
    let mut checks = Vec::new();
    for (i, &alpha) in opts.alphas.iter().enumerate() {
        let law = match StableLaw::with_config(alpha, quad) {
            Ok(l) => l,
            Err(e) => {
                checks.push(CheckItem::error(
                    format!("law alpha={alpha}"),
                    "abs",
                    0.0,
                    e,
                ));
                continue;
            }
        };
        checks.push(normalization(&law, 1e-6 * s));
        checks.extend(kernel_means(&law, 1e-4 * s));
        checks.extend(connection_identities(&law, 1e-4 * s));
        let seed = opts.seed.wrapping_add(i as u64);
        checks.extend(char_fn_check(
            &law,
            &[0.5, 1.0, 2.0],
            opts.draws,
            seed,
            opts.sigmas,
        ));
        checks.push(frac_moment_check(
            alpha,
            0.5,
            opts.draws / 2,
            seed ^ 0xF00D,
            opts.m_p,
            opts.sigmas,
        ));
    }
    checks.extend(laplace_oracle_check(
        theta0,
        x0,
        &[0.25, 0.5, 1.0],
        &[0.5, 1.0, 2.0],
        opts.laplace_paths,
        opts.laplace_n,
        substeps,
        opts.seed,
        opts.sigmas,
        &quad,
    ));
    match simulate_path(theta0, x0, opts.fd_n, substeps, opts.seed) {
        Ok(path) => checks.extend(gradient_check(&path, theta0, 1e-3, &quad)),
        Err(e) => checks.push(CheckItem::error("gradient path", "rel", 1e-3, e)),
    }
    CheckReport::new(opts.tol_scale, checks)
}
