//! The pure-jump stable CIR process
//! `dX_t = (a - b X_t) dt + δ X_{t-}^{1/α} dL_t`: Euler simulation on a fine
//! grid and the closed-form Laplace transform of `X_t`.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::Distribution;
use rand::Rng;

use crate::error::CirError;
use crate::quadrature::{integrate_scalar, QuadConfig};
use crate::rng::stream;
use crate::stable::StableSampler;

/// Paths whose absolute value exceeds this are reported as overflowing.
pub const OVERFLOW_LIMIT: f64 = 1e12;
/// Default number of Euler steps between consecutive observations.
pub const DEFAULT_SUBSTEPS: usize = 16;

/// Model parameters `(a, b, δ, α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub alpha: f64,
}

impl Theta {
    /// Validated constructor: `a > 0`, `δ > 0`, `1 < α < 2`, `b` finite.
    pub fn new(a: f64, b: f64, delta: f64, alpha: f64) -> Result<Self, CirError> {
        let t = Self { a, b, delta, alpha };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CirError> {
        self.check(false)
    }

    fn check(&self, allow_zero_delta: bool) -> Result<(), CirError> {
        let bad = |m: String| Err(CirError::InvalidParameter(m));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("a = {} must be positive", self.a));
        }
        if !self.b.is_finite() {
            return bad(format!("b = {} must be finite", self.b));
        }
        let delta_ok = if allow_zero_delta {
            self.delta >= 0.0
        } else {
            self.delta > 0.0
        };
        if !(delta_ok && self.delta.is_finite()) {
            return bad(format!("delta = {} must be positive", self.delta));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return bad(format!("alpha = {} must lie in (1, 2)", self.alpha));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a, self.b, self.delta, self.alpha]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            a: v[0],
            b: v[1],
            delta: v[2],
            alpha: v[3],
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(a={}, b={}, delta={}, alpha={})",
            self.a, self.b, self.delta, self.alpha
        )
    }
}

/// Observations `X_{i/n}`, `i = 0..=n`, with the simulation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub x0: f64,
    pub n: usize,
    pub obs: Vec<f64>,
    pub substeps: usize,
    pub seed: u64,
    /// Parameters used to simulate the path, when known.
    pub theta: Option<Theta>,
    /// Fine-grid steps at which the Euler state was floored at zero.
    pub floor_events: usize,
}

impl PathGrid {
    /// Wraps externally supplied observations (`obs[0]` is `x0`).
    pub fn from_observations(obs: Vec<f64>) -> Result<Self, CirError> {
        if obs.len() < 2 {
            return Err(CirError::InvalidParameter(
                "a path needs at least two observations".into(),
            ));
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(CirError::InvalidParameter("non-finite observation".into()));
        }
        Ok(Self {
            x0: obs[0],
            n: obs.len() - 1,
            obs,
            substeps: 1,
            seed: 0,
            theta: None,
            floor_events: 0,
        })
    }

    /// `X_{i/n} - X_{(i-1)/n}` for `i = 1..=n` (index `i - 1`).
    pub fn increments(&self) -> Vec<f64> {
        self.obs.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The same observations multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        p.x0 *= c;
        p.obs.iter_mut().for_each(|x| *x *= c);
        p.theta = None;
        p
    }

    /// Writes the `i,t,x` CSV and the `.meta` sidecar next to it.
    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "i,t,x")?;
        for (i, x) in self.obs.iter().enumerate() {
            writeln!(w, "{},{},{}", i, i as f64 / self.n as f64, x)?;
        }
        w.flush()?;

        let mut m = BufWriter::new(fs::File::create(meta_path(path))?);
        if let Some(t) = self.theta {
            writeln!(m, "a={}", t.a)?;
            writeln!(m, "b={}", t.b)?;
            writeln!(m, "delta={}", t.delta)?;
            writeln!(m, "alpha={}", t.alpha)?;
        }
        writeln!(m, "x0={}", self.x0)?;
        writeln!(m, "n={}", self.n)?;
        writeln!(m, "substeps={}", self.substeps)?;
        writeln!(m, "seed={}", self.seed)?;
        writeln!(m, "floor_events={}", self.floor_events)?;
        m.flush()
    }

    /// Reads a path written by [`PathGrid::write_csv`]; the sidecar is
    /// optional.
    pub fn read_csv(path: &Path) -> io::Result<Self> {
        let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let reader = io::BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "i,t,x" => {}
            _ => return Err(invalid(format!("{}: missing i,t,x header", path.display()))),
        }
        let mut obs = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let x = line
                .split(',')
                .nth(2)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| invalid(format!("{}: bad row {}", path.display(), row + 1)))?;
            obs.push(x);
        }
        let mut grid = Self::from_observations(obs).map_err(|e| invalid(e.to_string()))?;

        let meta = meta_path(path);
        if meta.exists() {
            let text = fs::read_to_string(&meta)?;
            let mut t = [None; 4];
            for line in text.lines() {
                let Some((k, v)) = line.split_once('=') else {
                    continue;
                };
                let v = v.trim();
                let num = || {
                    v.parse::<f64>()
                        .map_err(|_| invalid(format!("{}: bad value for {k}", meta.display())))
                };
                match k.trim() {
                    "a" => t[0] = Some(num()?),
                    "b" => t[1] = Some(num()?),
                    "delta" => t[2] = Some(num()?),
                    "alpha" => t[3] = Some(num()?),
                    "substeps" => grid.substeps = num()? as usize,
                    "seed" => {
                        grid.seed = v
                            .parse()
                            .map_err(|_| invalid(format!("{}: bad seed", meta.display())))?
                    }
                    "floor_events" => grid.floor_events = num()? as usize,
                    _ => {}
                }
            }
            if let [Some(a), Some(b), Some(delta), Some(alpha)] = t {
                grid.theta = Some(Theta { a, b, delta, alpha });
            }
        }
        Ok(grid)
    }
}

/// Sidecar location: the CSV path with its extension replaced by `.meta`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

/// `δ̄ = δ (α / |cos(πα/2)|)^{1/α}`.
pub fn delta_bar(theta: &Theta) -> f64 {
    let c = (std::f64::consts::FRAC_PI_2 * theta.alpha).cos().abs();
    theta.delta * (theta.alpha / c).powf(1.0 / theta.alpha)
}

/// Coefficient `δ̄^α / α` of the branching mechanism `R(z) = (δ̄^α/α) z^α + b z`.
fn branching_coef(theta: &Theta) -> f64 {
    let c = (std::f64::consts::FRAC_PI_2 * theta.alpha).cos().abs();
    theta.delta.powf(theta.alpha) / c
}

/// `R(z) = (δ̄^α/α) z^α + b z`.
pub fn branching_mechanism(theta: &Theta, z: f64) -> f64 {
    branching_coef(theta) * z.powf(theta.alpha) + theta.b * z
}

/// Positive root of `R` when `b < 0`, otherwise `0`.
pub fn u0(theta: &Theta) -> f64 {
    if theta.b < 0.0 {
        (-theta.b / branching_coef(theta)).powf(1.0 / (theta.alpha - 1.0))
    } else {
        0.0
    }
}

fn check_uv(theta: &Theta, u: f64, t: f64) -> Result<(), CirError> {
    theta.validate()?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(CirError::Domain(format!("u = {u} must be finite and >= 0")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(CirError::Domain(format!("t = {t} must be finite and >= 0")));
    }
    let root = u0(theta);
    if u > 0.0 && u <= root {
        return Err(CirError::Domain(format!(
            "u = {u} must exceed u0 = {root} when b < 0"
        )));
    }
    Ok(())
}

/// Solution of `∂_t v = -R(v)`, `v_0 = u`, in closed form.
pub fn v_t(theta: &Theta, u: f64, t: f64) -> Result<f64, CirError> {
    check_uv(theta, u, t)?;
    if u == 0.0 {
        return Ok(0.0);
    }
    let am1 = theta.alpha - 1.0;
    let coef = branching_coef(theta);
    // (1 - e^{-(α-1)bt}) / b, with its b → 0 limit (α-1)t.
    let growth = if theta.b == 0.0 {
        am1 * t
    } else {
        -(-am1 * theta.b * t).exp_m1() / theta.b
    };
    let bracket = 1.0 + coef * u.powf(am1) * growth;
    if !(bracket > 0.0) {
        return Err(CirError::Domain(format!(
            "non-positive bracket {bracket} at u = {u}, t = {t}"
        )));
    }
    Ok(u * (-theta.b * t).exp() / bracket.powf(1.0 / am1))
}

/// `E exp(-u X_t)` for the process started at `x0`:
/// `exp(-x0 v_t(u) - ∫_{v_t(u)}^u a dz / ((δ̄^α/α) z^{α-1} + b))`.
pub fn laplace_transform(
    theta: &Theta,
    x0: f64,
    t: f64,
    u: f64,
    cfg: &QuadConfig,
) -> Result<f64, CirError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(CirError::Domain(format!("x0 = {x0} must be positive")));
    }
    let v = v_t(theta, u, t)?;
    if u == 0.0 {
        return Ok(1.0);
    }
    let coef = branching_coef(theta);
    let am1 = theta.alpha - 1.0;
    let (a, b) = (theta.a, theta.b);
    let integral = if v == u {
        0.0
    } else {
        integrate_scalar(|z| a / (coef * z.powf(am1) + b), v, u, cfg)?
    };
    Ok((-x0 * v - integral).exp())
}

/// `E X_t = x0 e^{-bt} + a (1 - e^{-bt}) / b`.
pub fn mean(theta: &Theta, x0: f64, t: f64) -> f64 {
    let decay = (-theta.b * t).exp();
    let avg = if theta.b == 0.0 {
        t
    } else {
        -(-theta.b * t).exp_m1() / theta.b
    };
    x0 * decay + theta.a * avg
}

fn check_sim(theta: &Theta, x0: f64, n: usize, substeps: usize) -> Result<(), CirError> {
    theta.check(true)?;
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(CirError::InvalidParameter(format!(
            "x0 = {x0} must be positive"
        )));
    }
    if n < 4 {
        return Err(CirError::InvalidParameter(format!(
            "n = {n} must be at least 4"
        )));
    }
    if substeps == 0 {
        return Err(CirError::InvalidParameter(
            "substeps must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Euler scheme on `n · substeps` fine steps of `[0, 1]` with the state
/// floored at zero; stable increments are drawn as `h^{1/α} L_1`. Returns
/// the `n + 1` coarse observations and the number of flooring events.
pub fn simulate_with<R: Rng + ?Sized>(
    theta: &Theta,
    x0: f64,
    n: usize,
    substeps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize), CirError> {
    check_sim(theta, x0, n, substeps)?;
    let sampler = StableSampler::new(theta.alpha);
    let h = 1.0 / (n * substeps) as f64;
    let noise = theta.delta * h.powf(1.0 / theta.alpha);
    let inv_alpha = 1.0 / theta.alpha;
    let mut obs = Vec::with_capacity(n + 1);
    obs.push(x0);
    let mut x = x0;
    let mut floors = 0;
    let mut step = 0;
    for _ in 0..n {
        for _ in 0..substeps {
            step += 1;
            let drift = (theta.a - theta.b * x) * h;
            let jump = if noise > 0.0 {
                noise * x.powf(inv_alpha) * sampler.sample(rng)
            } else {
                0.0
            };
            x += drift + jump;
            if x < 0.0 {
                x = 0.0;
                floors += 1;
            }
            if !(x.abs() <= OVERFLOW_LIMIT) {
                return Err(CirError::Overflow { step, value: x });
            }
        }
        obs.push(x);
    }
    Ok((obs, floors))
}

/// Simulated path driven by the stream `(seed, 0)`; bit-identical for
/// identical arguments. `δ = 0` is accepted and gives the drift ODE.
pub fn simulate_path(
    theta: &Theta,
    x0: f64,
    n: usize,
    substeps: usize,
    seed: u64,
) -> Result<PathGrid, CirError> {
    let mut rng = stream(seed, 0);
    let (obs, floor_events) = simulate_with(theta, x0, n, substeps, &mut rng)?;
    Ok(PathGrid {
        x0,
        n,
        obs,
        substeps,
        seed,
        theta: Some(*theta),
        floor_events,
    })
}

/// Empirical `p`-moment of one-step increments for one observation count.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub n: usize,
    pub moment: f64,
    pub count: usize,
}

/// Increment-moment scaling across observation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementReport {
    pub p: f64,
    pub rows: Vec<MomentRow>,
    /// Least-squares slope of `log E|ΔX|^p` against `log n`.
    pub slope: f64,
}

fn group_by_n(paths: &[PathGrid]) -> Vec<(usize, Vec<&PathGrid>)> {
    let mut ns: Vec<usize> = paths.iter().map(|p| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| (n, paths.iter().filter(|p| p.n == n).collect()))
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Regresses the empirical `E|X_{i/n} - X_{(i-1)/n}|^p` on `n` in log-log
/// scale; the expected slope is `-p/α`.
pub fn increment_diagnostics(paths: &[PathGrid], p: f64) -> Result<IncrementReport, CirError> {
    if !(p > 0.0 && p < 2.0) {
        return Err(CirError::Domain(format!("p = {p} must lie in (0, 2)")));
    }
    let rows: Vec<MomentRow> = group_by_n(paths)
        .into_iter()
        .map(|(n, group)| {
            let mut sum = 0.0;
            let mut count = 0;
            for path in group {
                for d in path.increments() {
                    sum += d.abs().powf(p);
                    count += 1;
                }
            }
            MomentRow {
                n,
                moment: sum / count as f64,
                count,
            }
        })
        .collect();
    if rows.len() < 2 {
        return Err(CirError::Domain(
            "increment regression needs at least two distinct n".into(),
        ));
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.moment.ln()).collect();
    Ok(IncrementReport {
        p,
        slope: ls_slope(&lx, &ly),
        rows,
    })
}

/// Empirical mean of `X_{i/n}^{-q}` over all observations, per `n`.
/// Observations equal to zero make the entry infinite.
pub fn inverse_moments(paths: &[PathGrid], q: f64) -> Vec<MomentRow> {
    group_by_n(paths)
        .into_iter()
        .map(|(n, group)| {
            let mut sum = 0.0;
            let mut count = 0;
            for path in group {
                for x in &path.obs {
                    sum += x.powf(-q);
                    count += 1;
                }
            }
            MomentRow {
                n,
                moment: sum / count as f64,
                count,
            }
        })
        .collect()
}
