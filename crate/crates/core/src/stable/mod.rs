//! The spectrally positive strictly α-stable law, `1 < α < 2`, with
//! characteristic function `exp(-|u|^α (1 - i tan(πα/2) sgn u))`.
//!
//! Provides the density and its `(x, α)` derivatives, the log-derivative
//! kernels used by the quasi-score, expectations against the density, the
//! fractional absolute moments of a symmetrised pair and a sampler.

mod contour;
mod sampler;
mod table;

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::StableError;
use crate::quadrature::{integrate, QuadConfig};
use contour::{raw_jet, AlphaConsts, RawJet};

pub use sampler::StableSampler;
pub use table::KernelTable;

/// Densities below this value are treated as underflow by the kernels.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// `h = φ'/φ`, `k = 1 + x h`, `f = ∂_α φ / φ` at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreKernels {
    pub h: f64,
    pub k: f64,
    pub f: f64,
}

/// Log-density and the kernels with the derivatives the hessian needs.
///
/// `df` is both `∂_x f` and `∂_α h`; `fa` is `∂_α f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelJet {
    pub x: f64,
    pub log_density: f64,
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
    pub f: f64,
    pub df: f64,
    pub d2f: f64,
    pub fa: f64,
    pub dfa: f64,
}

impl KernelJet {
    fn from_raw(x: f64, raw: &RawJet) -> Result<Self, StableError> {
        use contour::*;
        let c = &raw.c;
        if !(c[PHI] > 0.0) {
            return Err(StableError::TailUnderflow {
                x,
                log_density: f64::NEG_INFINITY,
            });
        }
        let inv = 1.0 / c[PHI];
        let h = c[PHI_X] * inv;
        let dh = c[PHI_XX] * inv - h * h;
        let d2h = c[PHI_XXX] * inv - 3.0 * h * dh - h * h * h;
        let f = c[PHI_A] * inv;
        let a = c[PHI_XA] * inv;
        let df = a - f * h;
        let d2f = c[PHI_XXA] * inv - a * h - df * h - f * dh;
        let p = c[PHI_AA] * inv;
        let fa = p - f * f;
        let dfa = c[PHI_XAA] * inv - p * h - 2.0 * f * df;
        Ok(Self {
            x,
            log_density: raw.log_scale + c[PHI].ln(),
            h,
            dh,
            d2h,
            f,
            df,
            d2f,
            fa,
            dfa,
        })
    }

    pub fn density(&self) -> f64 {
        self.log_density.exp()
    }

    pub fn k(&self) -> f64 {
        1.0 + self.x * self.h
    }

    /// `k'(x) = h + x h'`.
    pub fn dk(&self) -> f64 {
        self.h + self.x * self.dh
    }

    /// `∂_α k = x ∂_α h`.
    pub fn dk_dalpha(&self) -> f64 {
        self.x * self.df
    }

    pub fn kernels(&self) -> ScoreKernels {
        ScoreKernels {
            h: self.h,
            k: self.k(),
            f: self.f,
        }
    }
}

/// The law `L_1^α`, with optional tabulated kernels for bulk evaluation.
#[derive(Debug)]
pub struct StableLaw {
    consts: AlphaConsts,
    quad: QuadConfig,
    cache: Option<KernelTable>,
    mode: OnceLock<f64>,
    floor: OnceLock<f64>,
}

impl Clone for StableLaw {
    fn clone(&self) -> Self {
        Self {
            consts: self.consts,
            quad: self.quad,
            cache: self.cache.clone(),
            mode: self.mode.clone(),
            floor: self.floor.clone(),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), StableError> {
    if alpha > 1.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(StableError::AlphaOutOfRange(alpha))
    }
}

impl StableLaw {
    pub fn new(alpha: f64) -> Result<Self, StableError> {
        Self::with_config(alpha, QuadConfig::default())
    }

    pub fn with_config(alpha: f64, quad: QuadConfig) -> Result<Self, StableError> {
        check_alpha(alpha)?;
        Ok(Self {
            consts: AlphaConsts::new(alpha),
            quad,
            cache: None,
            mode: OnceLock::new(),
            floor: OnceLock::new(),
        })
    }

    /// Builds the law together with its kernel table.
    pub fn tabulated(alpha: f64) -> Result<Self, StableError> {
        let mut law = Self::new(alpha)?;
        let table = KernelTable::build(&law, table::DEFAULT_STEP)?;
        law.cache = Some(table);
        Ok(law)
    }

    pub fn alpha(&self) -> f64 {
        self.consts.alpha
    }

    pub fn quad_config(&self) -> &QuadConfig {
        &self.quad
    }

    pub fn cache(&self) -> Option<&KernelTable> {
        self.cache.as_ref()
    }

    /// `E exp(iuL)`.
    pub fn char_fn(&self, u: f64) -> Complex64 {
        let alpha = self.alpha();
        let t = (FRAC_PI_2 * alpha).tan();
        let m = u.abs().powf(alpha);
        (Complex64::new(-m, m * t * u.signum())).exp()
    }

    /// Full jet at `x` by direct quadrature; no floor check.
    pub fn jet(&self, x: f64) -> Result<KernelJet, StableError> {
        let raw = raw_jet(&self.consts, x, &self.quad)?;
        KernelJet::from_raw(x, &raw)
    }

    pub fn log_density(&self, x: f64) -> Result<f64, StableError> {
        Ok(self.jet(x)?.log_density)
    }

    pub fn density(&self, x: f64) -> Result<f64, StableError> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn density_dx(&self, x: f64) -> Result<f64, StableError> {
        let j = self.jet(x)?;
        Ok(j.density() * j.h)
    }

    pub fn density_dalpha(&self, x: f64) -> Result<f64, StableError> {
        let j = self.jet(x)?;
        Ok(j.density() * j.f)
    }

    /// Kernel jet with the underflow floor enforced; served from the table
    /// when one was built.
    pub fn kernel_jet(&self, x: f64) -> Result<KernelJet, StableError> {
        let floor = self.floor_quantile()?;
        if x < floor {
            return Err(StableError::TailUnderflow {
                x,
                log_density: self.log_density(x).unwrap_or(f64::NEG_INFINITY),
            });
        }
        if let Some(table) = &self.cache {
            if let Some(j) = table.interpolate(x) {
                return Ok(j);
            }
        }
        let j = self.jet(x)?;
        // Slack absorbs the bisection error of the floor quantile itself.
        if j.log_density < DENSITY_FLOOR.ln() - 1e-6 {
            return Err(StableError::TailUnderflow {
                x,
                log_density: j.log_density,
            });
        }
        Ok(j)
    }

    pub fn kernels(&self, x: f64) -> Result<ScoreKernels, StableError> {
        Ok(self.kernel_jet(x)?.kernels())
    }

    /// Location of the density maximum (root of `h`).
    pub fn mode(&self) -> Result<f64, StableError> {
        if let Some(m) = self.mode.get() {
            return Ok(*m);
        }
        let h = |x: f64| self.jet(x).map(|j| j.h);
        let (mut lo, mut hi) = (-1.0, 0.0);
        while h(lo)? <= 0.0 {
            lo -= 1.0;
        }
        while h(hi)? >= 0.0 {
            hi += 1.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if h(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        let m = 0.5 * (lo + hi);
        Ok(*self.mode.get_or_init(|| m))
    }

    /// Point in the left tail where `log φ` equals `log_target`.
    fn left_quantile_of_log_density(&self, log_target: f64) -> Result<f64, StableError> {
        let mode = self.mode()?;
        // Start from the saddle-point tail equivalent exp(-ξ).
        let mut lo = -self.consts.left_tail_depth(-log_target);
        while self.log_density(lo)? > log_target {
            lo *= 1.5;
        }
        let mut hi = mode;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.log_density(mid)? < log_target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Smallest argument at which the kernels are evaluated: the point where
    /// the density reaches [`DENSITY_FLOOR`].
    pub fn floor_quantile(&self) -> Result<f64, StableError> {
        if let Some(x) = self.floor.get() {
            return Ok(*x);
        }
        let x = self.left_quantile_of_log_density(DENSITY_FLOOR.ln())?;
        Ok(*self.floor.get_or_init(|| x))
    }

    /// `∫ g(x) φ(x) dx`; `tail_order_hint` bounds the polynomial growth of
    /// `|g|` on the right tail and must be below `α`.
    pub fn expectation<G>(&self, g: G, tail_order_hint: f64) -> Result<f64, StableError>
    where
        G: Fn(f64) -> f64,
    {
        Ok(self.expectation_jet(|j: &KernelJet| [g(j.x)], tail_order_hint)?[0])
    }

    /// Vector version of [`expectation`](Self::expectation) whose integrand
    /// sees the full kernel jet at each node.
    pub fn expectation_jet<const N: usize, G>(
        &self,
        g: G,
        tail_order_hint: f64,
    ) -> Result<[f64; N], StableError>
    where
        G: Fn(&KernelJet) -> [f64; N],
    {
        let alpha = self.alpha();
        if !(tail_order_hint < alpha) {
            return Err(StableError::Domain(format!(
                "tail order {tail_order_hint} must be below alpha {alpha}"
            )));
        }
        let mode = self.mode()?;
        let cfg = self.quad;
        let failure = std::cell::Cell::new(None);
        let weighted = |x: f64, jac: f64| -> [f64; N] {
            match self.jet(x) {
                Ok(j) => {
                    let w = j.density() * jac;
                    let mut v = g(&j);
                    for e in v.iter_mut() {
                        *e = if w == 0.0 { 0.0 } else { *e * w };
                    }
                    v
                }
                Err(e) => {
                    failure.set(Some(e));
                    [0.0; N]
                }
            }
        };

        // Left of the mode: down to where ξ ≈ 90.
        let xi = 90.0;
        let x_left = mode.min(0.0) - self.consts.left_tail_depth(xi);
        let pieces = 8;
        let left_bps: Vec<f64> = (0..=pieces)
            .map(|i| x_left + (mode - x_left) * i as f64 / pieces as f64)
            .collect();
        let left = integrate(|x| weighted(x, 1.0), &left_bps, 1.0, &cfg);
        let mid = integrate(
            |x| weighted(x, 1.0),
            &[mode, mode + 0.5, mode + 1.0],
            1.0,
            &cfg,
        );
        // Right tail on x = mode + e^u, where the integrand decays like
        // exp(-(α - hint) u).
        let decay = alpha - tail_order_hint.max(0.0);
        let u_max = ((1.0 / cfg.rel_tol).ln() + 12.0) / decay;
        let tail_bps: Vec<f64> = (0..=16).map(|i| u_max * i as f64 / 16.0).collect();
        let tail_fn = |u: f64| {
            let e = u.exp();
            weighted(mode + e, e)
        };
        let tail = integrate(tail_fn, &tail_bps, 1.0, &cfg);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let (left, mid, tail) = match (left, mid, tail) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                return Err(StableError::Expectation(e));
            }
        };
        // Geometric extrapolation of what lies beyond u_max.
        let end = tail_fn(u_max);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let mut out = [0.0; N];
        for j in 0..N {
            let remainder = end[j] / decay;
            let l1 = left.l1[j] + mid.l1[j] + tail.l1[j];
            if remainder.abs() > (cfg.abs_tol).max(cfg.rel_tol * l1) * 10.0 {
                return Err(StableError::Expectation(
                    crate::error::QuadError::NotConverged {
                        panels: 0,
                        error_ratio: remainder.abs() / cfg.abs_tol.max(cfg.rel_tol * l1),
                    },
                ));
            }
            out[j] = left.value[j] + mid.value[j] + tail.value[j] + remainder;
        }
        Ok(out)
    }

    /// `P(L_1 <= x)` by quadrature of the density.
    pub fn cdf(&self, x: f64) -> Result<f64, StableError> {
        let x_left = x.min(-1.0) - self.consts.left_tail_depth(90.0);
        let bps: Vec<f64> = (0..=8)
            .map(|i| x_left + (x - x_left) * i as f64 / 8.0)
            .collect();
        let cfg = self.quad;
        let failure = std::cell::Cell::new(None);
        let r = integrate(
            |t| match self.jet(t) {
                Ok(j) => [j.density()],
                Err(e) => {
                    failure.set(Some(e));
                    [0.0]
                }
            },
            &bps,
            1e-3,
            &cfg,
        )
        .map_err(StableError::Expectation)?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        Ok(r.value[0])
    }

    pub fn sampler(&self) -> StableSampler {
        StableSampler::new(self.alpha())
    }
}

/// Lévy measure constant `C_α = -α(α-1) / (Γ(2-α) cos(πα/2))`.
pub fn levy_constant(alpha: f64) -> Result<f64, StableError> {
    check_alpha(alpha)?;
    Ok(-alpha * (alpha - 1.0) / (gamma(2.0 - alpha) * (FRAC_PI_2 * alpha).cos()))
}

/// `m_p(α) = E|L_1 - L'_1|^p` for an independent copy `L'_1`.
pub fn frac_moment_m(p: f64, alpha: f64) -> Result<f64, StableError> {
    check_alpha(alpha)?;
    if !(p > 0.0 && p < alpha) {
        return Err(StableError::Domain(format!(
            "fractional moment order {p} must lie in (0, {alpha})"
        )));
    }
    Ok(
        2f64.powf(p / alpha) * 2f64.powf(p) * gamma((p + 1.0) / 2.0) * gamma(1.0 - p / alpha)
            / (PI.sqrt() * gamma(1.0 - p / 2.0)),
    )
}
