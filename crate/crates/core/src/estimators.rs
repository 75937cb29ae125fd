//! Estimation of `(a, b, δ, α)` from the observations `X_{i/n}`.
//!
//! Pipeline: power-variation estimators of `α` and `δ`, a damped Newton
//! solve of the drift estimating equation with `(δ, α)` plugged in, then one
//! Newton step on the joint quasi-likelihood score in rate-normalised
//! coordinates.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};

use crate::cir::{PathGrid, Theta};
use crate::error::{EstimError, StableError};
use crate::stable::{frac_moment_m, KernelJet, StableLaw};

/// Range into which the preliminary `α̃` is clamped.
pub const ALPHA_MIN: f64 = 1.001;
pub const ALPHA_MAX: f64 = 1.999;
/// Box for the drift parameters `(a, b)`.
pub const A_RANGE: (f64, f64) = (1e-3, 1e3);
pub const B_RANGE: (f64, f64) = (-1e3, 1e3);
/// Lower bound applied to the one-step `δ`.
pub const DELTA_MIN: f64 = 1e-6;
/// Largest admissible condition number of a Newton system.
pub const MAX_COND: f64 = 1e12;
/// Largest admissible fraction of rescaled increments clamped at the floor.
pub const MAX_CLAMP_FRACTION: f64 = 0.05;
/// Largest admissible fraction of zero denominators in the `δ` estimator.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

// ---------------------------------------------------------------------------
// Stable laws shared across evaluations
// ---------------------------------------------------------------------------

/// Small cache of stable laws keyed by `α`, so that repeated evaluations at
/// the same exponent reuse one kernel table.
#[derive(Debug)]
pub struct LawCache {
    tabulated: bool,
    capacity: usize,
    entries: Mutex<VecDeque<(u64, Arc<StableLaw>)>>,
}

impl LawCache {
    /// Cache of tabulated laws (fast kernel evaluation).
    pub fn new() -> Self {
        Self::with_capacity(true, 4)
    }

    /// Cache of laws evaluated by direct quadrature at every point.
    pub fn direct() -> Self {
        Self::with_capacity(false, 16)
    }

    pub fn with_capacity(tabulated: bool, capacity: usize) -> Self {
        Self {
            tabulated,
            capacity: capacity.max(1),
            entries: Mutex::new(VecDeque::new()),
        }
    }

    pub fn get(&self, alpha: f64) -> Result<Arc<StableLaw>, StableError> {
        let key = alpha.to_bits();
        {
            let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
            if let Some((_, law)) = entries.iter().find(|(k, _)| *k == key) {
                return Ok(Arc::clone(law));
            }
        }
        let law = Arc::new(if self.tabulated {
            StableLaw::tabulated(alpha)?
        } else {
            StableLaw::new(alpha)?
        });
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if entries.len() >= self.capacity {
            entries.pop_front();
        }
        entries.push_back((key, Arc::clone(&law)));
        Ok(law)
    }
}

impl Default for LawCache {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Power variations and preliminary estimators
// ---------------------------------------------------------------------------

/// Power variations of second-order differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerVarStats {
    /// `Σ_{i=2}^n |Δ_i X - Δ_{i-1} X|^p`.
    pub v1: f64,
    /// `Σ_{i=4}^n |Δ_i X - Δ_{i-1} X + Δ_{i-2} X - Δ_{i-3} X|^p`.
    pub v2: f64,
    pub p: f64,
    pub n: usize,
}

impl PowerVarStats {
    /// `V¹` for `order = 1`, `V²` for `order = 2`.
    pub fn get(&self, order: u8) -> Option<f64> {
        match order {
            1 => Some(self.v1),
            2 => Some(self.v2),
            _ => None,
        }
    }
}

pub fn power_variation(path: &PathGrid, p: f64) -> Result<PowerVarStats, EstimError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(EstimError::Precondition(format!(
            "p = {p} must be positive"
        )));
    }
    if path.n < 4 || path.obs.len() != path.n + 1 {
        return Err(EstimError::Precondition(format!(
            "power variations need n >= 4 (n = {})",
            path.n
        )));
    }
    // d[i-1] = Δ_i X for i = 1..=n.
    let d = path.increments();
    let v1 = (1..d.len()).map(|j| (d[j] - d[j - 1]).abs().powf(p)).sum();
    let v2 = (3..d.len())
        .map(|j| (d[j] - d[j - 1] + d[j - 2] - d[j - 3]).abs().powf(p))
        .sum();
    Ok(PowerVarStats {
        v1,
        v2,
        p,
        n: path.n,
    })
}

/// Preliminary jump-activity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    /// Clamped into `[ALPHA_MIN, ALPHA_MAX]`.
    pub value: f64,
    /// `p ln 2 / ln(V² / V¹)` before clamping.
    pub raw: f64,
    pub clamped: bool,
}

/// `α̃_n(p) = p ln 2 / ln(V²/V¹)`; degenerate paths (`V¹ = V²` or a zero
/// variation) are an error.
pub fn estimate_alpha(path: &PathGrid, p: f64) -> Result<AlphaEstimate, EstimError> {
    let pv = power_variation(path, p)?;
    alpha_from_variations(&pv)
}

pub fn alpha_from_variations(pv: &PowerVarStats) -> Result<AlphaEstimate, EstimError> {
    if !(pv.v1 > 0.0 && pv.v2 > 0.0) || pv.v1 == pv.v2 {
        return Err(EstimError::DegeneratePath(format!(
            "power variations V1 = {}, V2 = {}",
            pv.v1, pv.v2
        )));
    }
    let raw = pv.p * std::f64::consts::LN_2 / (pv.v2 / pv.v1).ln();
    let value = if raw.is_nan() {
        ALPHA_MAX
    } else {
        raw.clamp(ALPHA_MIN, ALPHA_MAX)
    };
    Ok(AlphaEstimate {
        value,
        raw,
        clamped: value != raw,
    })
}

/// Preliminary scale estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    /// `[δ̃_n(p)]^{1/p}`.
    pub value: f64,
    /// The normalised power variation `δ̃_n(p)`, an estimate of `δ^p`.
    pub root: f64,
    /// Terms dropped because `X_{(i-2)/n} = 0`.
    pub skipped: usize,
}

/// `δ̃_n(p) = (1/m_p(α̃)) (1/n) Σ_{i=2}^n n^{p/α̃} |Δ_i X - Δ_{i-1} X|^p / X_{(i-2)/n}^{p/α̃}`,
/// returned together with `[δ̃_n(p)]^{1/p}`. Terms with a zero denominator are
/// skipped and the sum is rescaled by the fraction kept.
pub fn estimate_delta(
    path: &PathGrid,
    alpha_tilde: f64,
    p: f64,
) -> Result<DeltaEstimate, EstimError> {
    if !(alpha_tilde > 1.0 && alpha_tilde < 2.0) {
        return Err(EstimError::Precondition(format!(
            "alpha = {alpha_tilde} must lie in (1, 2)"
        )));
    }
    if !(p > 0.0 && p < alpha_tilde) {
        return Err(EstimError::Precondition(format!(
            "p = {p} must lie in (0, alpha)"
        )));
    }
    if path.n < 4 {
        return Err(EstimError::Precondition(format!(
            "n = {} must be >= 4",
            path.n
        )));
    }
    let m = frac_moment_m(p, alpha_tilde)?;
    let n = path.n as f64;
    let q = p / alpha_tilde;
    let x = &path.obs;
    let total = path.n - 1;
    let mut sum = 0.0;
    let mut skipped = 0;
    for i in 2..=path.n {
        let denom = x[i - 2];
        if !(denom > 0.0) {
            skipped += 1;
            continue;
        }
        let dd = x[i] - 2.0 * x[i - 1] + x[i - 2];
        sum += dd.abs().powf(p) / denom.powf(q);
    }
    if skipped as f64 > MAX_SKIP_FRACTION * total as f64 {
        return Err(EstimError::ZeroDenominators { skipped, total });
    }
    let kept = (total - skipped) as f64;
    let root = n.powf(q) * sum * (total as f64 / kept) / (n * m);
    Ok(DeltaEstimate {
        value: root.powf(1.0 / p),
        root,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Quasi-likelihood, score and hessian
// ---------------------------------------------------------------------------

/// `z = n^{1/α} (x_next - x_prev - a/n + b x_prev / n) / (δ x_prev^{1/α})`.
pub fn rescaled_increment(theta: &Theta, x_prev: f64, x_next: f64, n: usize) -> f64 {
    let nf = n as f64;
    let num = x_next - x_prev - theta.a / nf + theta.b * x_prev / nf;
    nf.powf(1.0 / theta.alpha) * num / (theta.delta * x_prev.powf(1.0 / theta.alpha))
}

/// Score, hessian and quasi-log-likelihood at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// `G_n(θ) = -∇_θ L_n(θ)`.
    pub g: Vector4<f64>,
    /// `J_n(θ) = ∇_θ G_n(θ)`.
    pub j: Matrix4<f64>,
    pub loglik: f64,
    /// Rescaled increments replaced by the floor quantile.
    pub tail_clamps: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    LogLik,
    Score,
    Hessian,
}

struct Eval {
    loglik: f64,
    g: Vector4<f64>,
    j: Matrix4<f64>,
    clamps: usize,
}

fn check_law(theta: &Theta, law: &StableLaw) -> Result<(), EstimError> {
    if !(theta.delta > 0.0 && theta.delta.is_finite()) {
        return Err(EstimError::Precondition(format!(
            "delta = {} must be positive",
            theta.delta
        )));
    }
    if !(theta.a.is_finite() && theta.b.is_finite()) {
        return Err(EstimError::Precondition(
            "non-finite drift parameters".into(),
        ));
    }
    if law.alpha() != theta.alpha {
        return Err(EstimError::Precondition(format!(
            "law has alpha = {} but theta has alpha = {}",
            law.alpha(),
            theta.alpha
        )));
    }
    Ok(())
}

fn check_positive(path: &PathGrid) -> Result<(), EstimError> {
    if path.obs.len() != path.n + 1 || path.n == 0 {
        return Err(EstimError::Precondition("malformed path".into()));
    }
    if let Some(i) = path.obs[..path.n].iter().position(|&x| !(x > 0.0)) {
        return Err(EstimError::Precondition(format!(
            "observation {i} is not positive ({})",
            path.obs[i]
        )));
    }
    Ok(())
}

fn evaluate(
    path: &PathGrid,
    theta: &Theta,
    law: &StableLaw,
    level: Level,
) -> Result<Eval, EstimError> {
    check_law(theta, law)?;
    check_positive(path)?;
    let Theta { a, b, delta, alpha } = *theta;
    let n = path.n;
    let nf = n as f64;
    let ln_n = nf.ln();
    let inv_alpha = 1.0 / alpha;
    let a2 = alpha * alpha;
    let floor = law.floor_quantile()?;

    let mut loglik = 0.0;
    let mut g = Vector4::zeros();
    let mut j = Matrix4::zeros();
    let mut clamps = 0;
    for i in 1..=n {
        let x = path.obs[i - 1];
        let y = path.obs[i];
        let ln_x = x.ln();
        let lam = ln_n - ln_x;
        // ln(n^{1/α} / (δ x^{1/α})) = λ/α - ln δ.
        let log_scale = lam * inv_alpha - delta.ln();
        let s = log_scale.exp();
        let mut z = s * (y - x - a / nf + b * x / nf);
        if !z.is_finite() {
            return Err(EstimError::Precondition(format!(
                "rescaled increment {i} is not finite"
            )));
        }
        if z < floor {
            z = floor;
            clamps += 1;
        }
        let kj: KernelJet = law.kernel_jet(z)?;
        loglik += log_scale + kj.log_density;
        if level == Level::LogLik {
            continue;
        }
        let big_s = s / nf;
        let h = kj.h;
        let k = 1.0 + z * h;
        let f = kj.f;
        g[0] += big_s * h;
        g[1] -= big_s * x * h;
        g[2] += k / delta;
        g[3] += lam * k / a2 - f;
        if level < Level::Hessian {
            continue;
        }
        let dh = kj.dh;
        let dk = h + z * dh;
        let df = kj.df;
        let fa = kj.fa;
        let dz = [-big_s, big_s * x, -z / delta, -lam * z / a2];
        let ds = [0.0, 0.0, -big_s / delta, -big_s * lam / a2];
        for l in 0..4 {
            let at_alpha = if l == 3 { 1.0 } else { 0.0 };
            let at_delta = if l == 2 { 1.0 } else { 0.0 };
            let d_g1 = ds[l] * h + big_s * (dh * dz[l] + at_alpha * df);
            let dk_l = dk * dz[l] + at_alpha * z * df;
            let d_g3 = -at_delta * k / (delta * delta) + dk_l / delta;
            let d_g4 = -at_alpha * 2.0 * lam * k / (a2 * alpha) + lam / a2 * dk_l
                - (df * dz[l] + at_alpha * fa);
            j[(0, l)] += d_g1;
            j[(1, l)] -= x * d_g1;
            j[(2, l)] += d_g3;
            j[(3, l)] += d_g4;
        }
    }
    Ok(Eval {
        loglik,
        g,
        j,
        clamps,
    })
}

fn check_clamps(clamps: usize, n: usize) -> Result<(), EstimError> {
    if clamps as f64 > MAX_CLAMP_FRACTION * n as f64 {
        Err(EstimError::TooManyClamps {
            clamped: clamps,
            total: n,
        })
    } else {
        Ok(())
    }
}

/// Quasi-log-likelihood `L_n(θ)` and the number of floor clamps.
pub fn quasi_loglik(
    path: &PathGrid,
    theta: &Theta,
    law: &StableLaw,
) -> Result<(f64, usize), EstimError> {
    let e = evaluate(path, theta, law, Level::LogLik)?;
    check_clamps(e.clamps, path.n)?;
    Ok((e.loglik, e.clamps))
}

/// `G_n(θ) = -∇_θ L_n(θ)`.
pub fn score(path: &PathGrid, theta: &Theta, law: &StableLaw) -> Result<Vector4<f64>, EstimError> {
    let e = evaluate(path, theta, law, Level::Score)?;
    check_clamps(e.clamps, path.n)?;
    Ok(e.g)
}

/// Analytic `J_n(θ) = ∇_θ G_n(θ)`.
pub fn hessian(
    path: &PathGrid,
    theta: &Theta,
    law: &StableLaw,
) -> Result<Matrix4<f64>, EstimError> {
    Ok(score_report(path, theta, law)?.j)
}

pub fn score_report(
    path: &PathGrid,
    theta: &Theta,
    law: &StableLaw,
) -> Result<ScoreReport, EstimError> {
    let e = evaluate(path, theta, law, Level::Hessian)?;
    check_clamps(e.clamps, path.n)?;
    Ok(ScoreReport {
        g: e.g,
        j: e.j,
        loglik: e.loglik,
        tail_clamps: e.clamps,
    })
}

// ---------------------------------------------------------------------------
// Drift solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    pub init: (f64, f64),
    pub max_iter: usize,
    /// Multiplies the convergence tolerance.
    pub tol_scale: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            init: (1.0, 0.0),
            max_iter: 50,
            tol_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftFit {
    pub a: f64,
    pub b: f64,
    pub iters: usize,
    /// Projected `|G^{(d)}|` at the returned point.
    pub residual: f64,
    /// Whether a box constraint is active at the returned point.
    pub at_bound: bool,
    pub tail_clamps: usize,
}

fn project_drift(a: f64, b: f64) -> (f64, f64) {
    (a.clamp(A_RANGE.0, A_RANGE.1), b.clamp(B_RANGE.0, B_RANGE.1))
}

fn condition_sym2(m: &Matrix2<f64>) -> (f64, f64, f64) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo.abs() == 0.0 {
        f64::INFINITY
    } else {
        hi.abs().max(lo.abs()) / hi.abs().min(lo.abs())
    };
    (lo, hi, cond)
}

/// Components of the drift box where the quasi-likelihood still increases
/// outwards (`∇L = -G`), so the bound is active.
fn active_bounds(a: f64, b: f64, g: &Vector2<f64>) -> [bool; 2] {
    let at = |x: f64, (lo, hi): (f64, f64), gi: f64| (x <= lo && gi > 0.0) || (x >= hi && gi < 0.0);
    [at(a, A_RANGE, g[0]), at(b, B_RANGE, g[1])]
}

/// Root of the drift estimating equation `G^{(d)}(a, b) = 0` at fixed
/// `(δ, α)`: Newton steps on the 2×2 block of `J_n`, halved until the
/// quasi-likelihood increases, with iterates kept in the drift box. When
/// the maximiser lies on the box boundary the active components are frozen
/// and the residual is the projected gradient.
pub fn solve_drift(
    path: &PathGrid,
    delta: f64,
    alpha: f64,
    cfg: &DriftConfig,
    law: &StableLaw,
) -> Result<DriftFit, EstimError> {
    let n = path.n;
    let (mut a, mut b) = project_drift(cfg.init.0, cfg.init.1);
    let theta_at = |a: f64, b: f64| Theta { a, b, delta, alpha };
    let scale = (n as f64).powf(1.0 / alpha - 1.0);
    let mut cur = evaluate(path, &theta_at(a, b), law, Level::Hessian)?;
    check_clamps(cur.clamps, n)?;
    for iter in 0..=cfg.max_iter {
        let gd = Vector2::new(cur.g[0], cur.g[1]);
        let active = active_bounds(a, b, &gd);
        let mut gp = gd;
        for k in 0..2 {
            if active[k] {
                gp[k] = 0.0;
            }
        }
        let residual = gp.norm();
        let tol = 1e-8 * cfg.tol_scale * scale * (1.0 + a.hypot(b));
        if residual < tol {
            return Ok(DriftFit {
                a,
                b,
                iters: iter,
                residual,
                at_bound: active[0] || active[1],
                tail_clamps: cur.clamps,
            });
        }
        if iter == cfg.max_iter {
            return Err(EstimError::NonConvergence {
                iters: iter,
                residual,
            });
        }
        let jd = cur.j.fixed_view::<2, 2>(0, 0).into_owned();
        let step = if active[0] || active[1] {
            // One free coordinate: a scalar Newton step, falling back to a
            // gradient step when the curvature is not positive.
            let k = if active[0] { 1 } else { 0 };
            let mut step = Vector2::zeros();
            let curv = jd[(k, k)];
            step[k] = if curv > 0.0 {
                -gp[k] / curv
            } else {
                -gp[k] / curv.abs().max(1.0)
            };
            step
        } else {
            let (lo, hi, cond) = condition_sym2(&jd);
            if lo > 0.0 && cond > MAX_COND {
                return Err(EstimError::SingularHessian { cond });
            }
            // Away from the maximum the block may be indefinite; shift it so
            // the step is an ascent direction for L_n.
            let shift = if lo > 0.0 {
                0.0
            } else {
                lo.abs() + 1e-3 * hi.abs().max(1e-300)
            };
            let sys = jd + Matrix2::identity() * shift;
            sys.lu().solve(&(-gd)).ok_or(EstimError::SingularHessian {
                cond: f64::INFINITY,
            })?
        };
        // Directional derivative of L_n along the step (∇L = -G).
        let slope = -gp.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (na, nb) = project_drift(a + t * step[0], b + t * step[1]);
            let cand = evaluate(path, &theta_at(na, nb), law, Level::LogLik)?;
            let ok_clamps = cand.clamps as f64 <= MAX_CLAMP_FRACTION * n as f64;
            let rounding = 1e-13 * (1.0 + cur.loglik.abs());
            if ok_clamps && cand.loglik >= cur.loglik + 1e-4 * t * slope.max(0.0) - rounding {
                accepted = Some((na, nb));
                break;
            }
            t *= 0.5;
        }
        let Some((na, nb)) = accepted else {
            return Err(EstimError::NonConvergence {
                iters: iter,
                residual,
            });
        };
        a = na;
        b = nb;
        cur = evaluate(path, &theta_at(a, b), law, Level::Hessian)?;
    }
    unreachable!("loop returns on its last iteration")
}

// ---------------------------------------------------------------------------
// Rate matrix, one-step correction and information matrix
// ---------------------------------------------------------------------------

/// `r_n(θ) = [[1/δ, ln n / α²], [0, 1]]`.
pub fn r_matrix(n: usize, theta: &Theta) -> Matrix2<f64> {
    Matrix2::new(
        1.0 / theta.delta,
        (n as f64).ln() / (theta.alpha * theta.alpha),
        0.0,
        1.0,
    )
}

/// `v_n = r_n(θ)^{-1} = [[δ, -δ ln n / α²], [0, 1]]`.
pub fn v_matrix(n: usize, theta: &Theta) -> Matrix2<f64> {
    let d = theta.delta;
    Matrix2::new(
        d,
        -d * (n as f64).ln() / (theta.alpha * theta.alpha),
        0.0,
        1.0,
    )
}

/// Block-diagonal `u_n = diag(n^{-(1/α - 1/2)} Id_2, n^{-1/2} v_n)` evaluated
/// at `θ`.
pub fn rate_matrix(n: usize, theta: &Theta) -> Result<Matrix4<f64>, EstimError> {
    if n < 2 {
        return Err(EstimError::Precondition(format!("n = {n} must be >= 2")));
    }
    let nf = n as f64;
    let drift = nf.powf(-(1.0 / theta.alpha - 0.5));
    let v = v_matrix(n, theta) / nf.sqrt();
    let mut u = Matrix4::zeros();
    u[(0, 0)] = drift;
    u[(1, 1)] = drift;
    u.fixed_view_mut::<2, 2>(2, 2).copy_from(&v);
    Ok(u)
}

fn cond_general(m: &Matrix4<f64>) -> f64 {
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStep {
    pub theta: Theta,
    /// Whether the updated parameters were moved into the admissible box.
    pub clamped: bool,
    /// Condition number of `u_nᵀ J_n u_n`.
    pub cond: f64,
    pub tail_clamps: usize,
}

/// Clamps `(a, b, δ, α)` into the admissible box.
pub fn clamp_theta(v: [f64; 4]) -> (Theta, bool) {
    let c = [
        v[0].clamp(A_RANGE.0, A_RANGE.1),
        v[1].clamp(B_RANGE.0, B_RANGE.1),
        v[2].max(DELTA_MIN),
        v[3].clamp(ALPHA_MIN, ALPHA_MAX),
    ];
    let clamped = c.iter().zip(&v).any(|(x, y)| x != y) || v.iter().any(|x| x.is_nan());
    (Theta::from_array(c), clamped)
}

/// Curvature used by the one-step correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// The observed hessian `J_n(θ̂₀)`.
    Observed,
    /// Its rate-normalised limit: `u_nᵀ J_n u_n` replaced by `I(θ̂₀)`.
    Expected,
}

impl std::str::FromStr for Curvature {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "observed" => Ok(Curvature::Observed),
            "expected" => Ok(Curvature::Expected),
            _ => Err(format!(
                "unknown curvature '{s}' (expected 'observed' or 'expected')"
            )),
        }
    }
}

/// How the rate-normalised step `w` is mapped back to parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    /// `θ̂₁ = θ̂₀ + u_n w`.
    Linear,
    /// The same step taken in the coordinates `(a, b, ln δ - ln n / α, α)`,
    /// which agree with `u_n w` to first order and follow the exact scaling
    /// of `z_i^n` in `(δ, α)`.
    LogScale,
}

impl std::str::FromStr for Update {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Update::Linear),
            "log_scale" => Ok(Update::LogScale),
            _ => Err(format!(
                "unknown update '{s}' (expected 'linear' or 'log_scale')"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepConfig {
    pub curvature: Curvature,
    pub update: Update,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            curvature: Curvature::Expected,
            update: Update::LogScale,
        }
    }
}

impl StepConfig {
    /// `θ̂₀ - J_n(θ̂₀)^{-1} G_n(θ̂₀)` without any substitution.
    pub const NEWTON: StepConfig = StepConfig {
        curvature: Curvature::Observed,
        update: Update::Linear,
    };
}

/// One Newton step from `θ̂₀` in rate-normalised coordinates: solve
/// `M w = -u_nᵀ G_n(θ̂₀)` with `M = u_nᵀ J_n(θ̂₀) u_n`
/// ([`Curvature::Observed`]) or `M = I(θ̂₀)` ([`Curvature::Expected`]), then
/// move by `u_n w` as selected by [`Update`].
pub fn one_step(
    path: &PathGrid,
    theta0: &Theta,
    law: &StableLaw,
    cfg: &StepConfig,
) -> Result<OneStep, EstimError> {
    let rep = match cfg.curvature {
        Curvature::Observed => score_report(path, theta0, law)?,
        Curvature::Expected => {
            let e = evaluate(path, theta0, law, Level::Score)?;
            check_clamps(e.clamps, path.n)?;
            ScoreReport {
                g: e.g,
                j: Matrix4::zeros(),
                loglik: e.loglik,
                tail_clamps: e.clamps,
            }
        }
    };
    let u = rate_matrix(path.n, theta0)?;
    let m = match cfg.curvature {
        Curvature::Observed => u.transpose() * rep.j * u,
        Curvature::Expected => info_matrix(path, theta0, law)?,
    };
    let cond = cond_general(&m);
    if !(cond <= MAX_COND) {
        return Err(EstimError::SingularHessian { cond });
    }
    let rhs = -(u.transpose() * rep.g);
    let w = m.lu().solve(&rhs).ok_or(EstimError::SingularHessian {
        cond: f64::INFINITY,
    })?;
    let step = u * w;
    let mut raw = [
        theta0.a + step[0],
        theta0.b + step[1],
        theta0.delta + step[2],
        theta0.alpha + step[3],
    ];
    if cfg.update == Update::LogScale {
        let ln_n = (path.n as f64).ln();
        let ds = w[2] / (path.n as f64).sqrt();
        raw[2] = theta0.delta
            * (ds + ln_n * (1.0 / raw[3].clamp(ALPHA_MIN, ALPHA_MAX) - 1.0 / theta0.alpha)).exp();
    }
    let (theta, clamped) = clamp_theta(raw);
    Ok(OneStep {
        theta,
        clamped,
        cond,
        tail_clamps: rep.tail_clamps,
    })
}

/// Stable-law expectations entering the information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    pub hh: f64,
    pub hk: f64,
    pub kk: f64,
    pub fh: f64,
    pub fk: f64,
    pub ff: f64,
    /// `E ∂_α f`, equal to `-E f²`.
    pub fa: f64,
}

pub fn kernel_moments(law: &StableLaw) -> Result<KernelMoments, StableError> {
    let [hh, hk, kk, fh, fk, ff, fa] = law.expectation_jet(
        |j| {
            let k = j.k();
            [
                j.h * j.h,
                j.h * k,
                k * k,
                j.f * j.h,
                j.f * k,
                j.f * j.f,
                j.fa,
            ]
        },
        0.0,
    )?;
    Ok(KernelMoments {
        hh,
        hk,
        kk,
        fh,
        fk,
        ff,
        fa,
    })
}

/// Left-endpoint Riemann sums of the path functionals in `I(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathIntegrals {
    /// `∫ X^{-2/α}`, `∫ X^{1-2/α}`, `∫ X^{2-2/α}`.
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    /// `∫ X^{-1/α}`, `∫ X^{1-1/α}`.
    pub r0: f64,
    pub r1: f64,
    /// `∫ ln X · X^{-1/α}`, `∫ ln X · X^{1-1/α}`.
    pub lr0: f64,
    pub lr1: f64,
    /// `∫ ln X`, `∫ (ln X)²`.
    pub l1: f64,
    pub l2: f64,
}

pub fn path_integrals(path: &PathGrid, alpha: f64) -> Result<PathIntegrals, EstimError> {
    check_positive(path)?;
    let n = path.n as f64;
    let mut s = [0.0; 9];
    for &x in &path.obs[..path.n] {
        let lx = x.ln();
        let p2 = (-2.0 * lx / alpha).exp();
        let p1 = (-lx / alpha).exp();
        s[0] += p2;
        s[1] += x * p2;
        s[2] += x * x * p2;
        s[3] += p1;
        s[4] += x * p1;
        s[5] += lx * p1;
        s[6] += lx * x * p1;
        s[7] += lx;
        s[8] += lx * lx;
    }
    let [q0, q1, q2, r0, r1, lr0, lr1, l1, l2] = s.map(|v| v / n);
    Ok(PathIntegrals {
        q0,
        q1,
        q2,
        r0,
        r1,
        lr0,
        lr1,
        l1,
        l2,
    })
}

/// Assembles `I(θ)` from path integrals and kernel moments.
pub fn assemble_info(theta: &Theta, p: &PathIntegrals, m: &KernelMoments) -> Matrix4<f64> {
    let (d, a) = (theta.delta, theta.alpha);
    let a2 = a * a;
    let mut i = Matrix4::zeros();
    let c = m.hh / (d * d);
    i[(0, 0)] = c * p.q0;
    i[(1, 0)] = -c * p.q1;
    i[(1, 1)] = c * p.q2;
    i[(2, 2)] = m.kk;
    i[(3, 2)] = -p.l1 * m.kk / a2 - m.fk;
    i[(3, 3)] = p.l2 * m.kk / (a2 * a2) + 2.0 * p.l1 * m.fk / a2 + m.ff;
    i[(2, 0)] = p.r0 * m.hk / d;
    i[(2, 1)] = -p.r1 * m.hk / d;
    i[(3, 0)] = -p.lr0 * m.hk / (d * a2) - p.r0 * m.fh / d;
    i[(3, 1)] = p.lr1 * m.hk / (d * a2) + p.r1 * m.fh / d;
    for r in 0..4 {
        for c in 0..r {
            i[(c, r)] = i[(r, c)];
        }
    }
    i
}

/// Information matrix `I(θ)`; errors unless it is positive definite.
pub fn info_matrix(
    path: &PathGrid,
    theta: &Theta,
    law: &StableLaw,
) -> Result<Matrix4<f64>, EstimError> {
    if law.alpha() != theta.alpha {
        return Err(EstimError::Precondition(
            "law and theta disagree on alpha".into(),
        ));
    }
    let p = path_integrals(path, theta.alpha)?;
    let m = kernel_moments(law)?;
    let info = assemble_info(theta, &p, &m);
    let min_eig = SymmetricEigen::new(info).eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(EstimError::NotPositiveDefinite { min_eig });
    }
    Ok(info)
}

/// Symmetric square root of a positive definite matrix.
pub fn sym_sqrt(m: &Matrix4<f64>) -> Matrix4<f64> {
    let e = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let d = Matrix4::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimConfig {
    /// Power-variation order for the preliminary estimators.
    pub p: f64,
    pub drift: DriftConfig,
    pub step: StepConfig,
}

impl Default for EstimConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            drift: DriftConfig::default(),
            step: StepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub seed: u64,
    pub n: usize,
    /// `(ã, b̃, δ̃, α̃)`.
    pub theta_prelim: Theta,
    /// `θ̂₁`.
    pub theta_onestep: Theta,
    pub alpha_raw: f64,
    pub alpha_clamped: bool,
    /// `δ̃_n(p)` before the power `1/p`.
    pub delta_root: f64,
    pub drift_iters: usize,
    pub drift_residual: f64,
    pub drift_at_bound: bool,
    pub onestep_clamped: bool,
    pub tail_clamps: usize,
    /// `I(θ̂₁)`.
    pub info: Matrix4<f64>,
    /// Diagonal of `u_n(θ̂₁)`.
    pub rates: [f64; 4],
    /// `sqrt(diag(u_n I(θ̂₁)^{-1} u_nᵀ))`.
    pub stderr: [f64; 4],
}

pub const CSV_HEADER: &str = "seed,n,a_hat,b_hat,delta_hat,alpha_hat,a_pre,b_pre,delta_pre,alpha_pre,se_a,se_b,se_delta,se_alpha,clamps,iters";

impl EstimationResult {
    /// Floor clamps plus the number of range clamps applied to `α̃`, the
    /// drift solve and `θ̂₁`.
    pub fn clamps(&self) -> usize {
        self.tail_clamps
            + self.alpha_clamped as usize
            + self.drift_at_bound as usize
            + self.onestep_clamped as usize
    }

    pub fn csv_row(&self) -> String {
        let (t1, t0, se) = (&self.theta_onestep, &self.theta_prelim, &self.stderr);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            t1.a,
            t1.b,
            t1.delta,
            t1.alpha,
            t0.a,
            t0.b,
            t0.delta,
            t0.alpha,
            se[0],
            se[1],
            se[2],
            se[3],
            self.clamps(),
            self.drift_iters
        )
    }
}

/// Preliminary estimators, drift solve, one-step correction and standard
/// errors. Errors carry the name of the failing stage.
pub fn estimate_full(
    path: &PathGrid,
    cfg: &EstimConfig,
    laws: &LawCache,
) -> Result<EstimationResult, EstimError> {
    if path.n < 8 {
        return Err(EstimError::Precondition(format!(
            "the pipeline needs n >= 8 (n = {})",
            path.n
        )));
    }
    let alpha = estimate_alpha(path, cfg.p).map_err(|e| e.in_stage("alpha"))?;
    let delta = estimate_delta(path, alpha.value, cfg.p).map_err(|e| e.in_stage("delta"))?;
    let law = laws
        .get(alpha.value)
        .map_err(|e| EstimError::from(e).in_stage("drift"))?;
    let drift = solve_drift(path, delta.value, alpha.value, &cfg.drift, &law)
        .map_err(|e| e.in_stage("drift"))?;
    let prelim = Theta {
        a: drift.a,
        b: drift.b,
        delta: delta.value,
        alpha: alpha.value,
    };
    let step = one_step(path, &prelim, &law, &cfg.step).map_err(|e| e.in_stage("one_step"))?;
    let theta1 = step.theta;
    let info_law =
        StableLaw::new(theta1.alpha).map_err(|e| EstimError::from(e).in_stage("info"))?;
    let info = info_matrix(path, &theta1, &info_law).map_err(|e| e.in_stage("info"))?;
    let u = rate_matrix(path.n, &theta1)?;
    let inv = info
        .try_inverse()
        .ok_or(EstimError::SingularHessian {
            cond: f64::INFINITY,
        })
        .map_err(|e| e.in_stage("info"))?;
    let cov = u * inv * u.transpose();
    let stderr = [0, 1, 2, 3].map(|k| cov[(k, k)].max(0.0).sqrt());
    Ok(EstimationResult {
        seed: path.seed,
        n: path.n,
        theta_prelim: prelim,
        theta_onestep: theta1,
        alpha_raw: alpha.raw,
        alpha_clamped: alpha.clamped,
        delta_root: delta.root,
        drift_iters: drift.iters,
        drift_residual: drift.residual,
        drift_at_bound: drift.at_bound,
        onestep_clamped: step.clamped,
        tail_clamps: step.tail_clamps,
        info,
        rates: [0, 1, 2, 3].map(|k| u[(k, k)]),
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(obs: &[f64]) -> PathGrid {
        PathGrid::from_observations(obs.to_vec()).unwrap()
    }

    #[test]
    fn hand_enumerated_power_variations() {
        let pv = power_variation(&grid(&[0.0, 1.0, 0.0, 1.0, 0.0]), 2.0).unwrap();
        assert_eq!((pv.v1, pv.v2), (12.0, 16.0));
        assert_eq!(pv.get(1), Some(12.0));
        assert_eq!(pv.get(2), Some(16.0));
        assert_eq!(pv.get(3), None);
    }

    #[test]
    fn constant_and_linear_paths_vanish() {
        let c = power_variation(&grid(&[2.0; 9]), 0.5).unwrap();
        assert_eq!((c.v1, c.v2), (0.0, 0.0));
        let lin: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let l = power_variation(&grid(&lin), 0.5).unwrap();
        assert!(l.v1 < 1e-7);
        assert!(matches!(
            estimate_alpha(&grid(&[2.0; 9]), 0.5),
            Err(EstimError::DegeneratePath(_))
        ));
    }

    #[test]
    fn alpha_inverts_ratio() {
        let p = 0.5;
        let pv = PowerVarStats {
            v1: 3.0,
            v2: 3.0 * 2f64.powf(p / 1.5),
            p,
            n: 100,
        };
        let a = alpha_from_variations(&pv).unwrap();
        assert!((a.value - 1.5).abs() < 1e-12);
        assert!(!a.clamped);
        let same = PowerVarStats { v2: 3.0, ..pv };
        assert!(alpha_from_variations(&same).is_err());
        let wide = PowerVarStats {
            v2: 3.0 * 2f64.powf(p / 2.5),
            ..pv
        };
        let c = alpha_from_variations(&wide).unwrap();
        assert!(c.clamped && c.value == ALPHA_MAX);
    }

    #[test]
    fn rescaled_increment_arithmetic() {
        let t = Theta::new(2.0, 1.0, 0.5, 1.5).unwrap();
        let z = rescaled_increment(&t, 1.0, 1.1, 100);
        assert!((z - 100f64.powf(2.0 / 3.0) * 0.18).abs() < 1e-12);
        assert!((z - 3.8779).abs() < 1e-4);
        let exact = 1.0 + 2.0 / 100.0 - 1.0 / 100.0;
        assert!(rescaled_increment(&t, 1.0, exact, 100).abs() < 1e-12);
        let t2 = Theta { delta: 1.0, ..t };
        assert!((rescaled_increment(&t2, 1.0, 1.1, 100) - 0.5 * z).abs() < 1e-12);
    }

    #[test]
    fn rate_matrix_blocks() {
        let t = Theta::new(1.0, 0.0, 1.0, 1.5).unwrap();
        let r = r_matrix(100, &t);
        assert!((r[(0, 1)] - 100f64.ln() / 2.25).abs() < 1e-15);
        assert_eq!(r.determinant(), 1.0);
        let prod = r * v_matrix(100, &t);
        assert_eq!(prod, Matrix2::identity());
        let u = rate_matrix(100, &t).unwrap();
        let d = 100f64.powf(-(2.0 / 3.0 - 0.5));
        assert!((u[(0, 0)] - d).abs() < 1e-15 && (u[(1, 1)] - d).abs() < 1e-15);
        assert_eq!(u[(0, 1)], 0.0);
        assert!(rate_matrix(1, &t).is_err());
    }

    #[test]
    fn clamp_box() {
        let (t, c) = clamp_theta([2.0, 1.0, 0.5, 1.5]);
        assert!(!c && t == Theta::new(2.0, 1.0, 0.5, 1.5).unwrap());
        let (t, c) = clamp_theta([-1.0, 1e4, -0.1, 2.3]);
        assert!(c);
        assert_eq!(t.to_array(), [1e-3, 1e3, DELTA_MIN, ALPHA_MAX]);
    }

    #[test]
    fn law_cache_reuses_entries() {
        let cache = LawCache::direct();
        let a = cache.get(1.5).unwrap();
        let b = cache.get(1.5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let small = LawCache::with_capacity(false, 1);
        let x = small.get(1.4).unwrap();
        small.get(1.6).unwrap();
        assert!(!Arc::ptr_eq(&x, &small.get(1.4).unwrap()));
    }
}
