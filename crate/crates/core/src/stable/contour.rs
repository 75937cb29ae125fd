//! Density of the spectrally positive strictly stable law by inversion of its
//! two-sided Laplace transform `E exp(-λL) = exp(c λ^α)`, `c = 1/|cos(πα/2)|`.
//!
//! The Bromwich integral is deformed away from the imaginary axis:
//!
//! * `x <= 0`: vertical line `Re λ = γ` through the real saddle point of
//!   `λx + cλ^α`. The integrand is scaled by its value at the saddle so the
//!   super-exponentially small left tail keeps full relative accuracy.
//! * `x > 0`: the ray `arg λ = ω` with `ω ∈ (π/2, min(π, 3π/(2α)))`. For
//!   larger `x` the constant term of `exp(cλ^α)` is removed (its contribution
//!   is real), leaving an integrand of the same order as the `x^{-1-α}` tail.
//!
//! The contour does not move with `α`, so every `α`-derivative is obtained by
//! differentiating `cλ^α` under the integral sign.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{QuadError, StableError};
use crate::quadrature::{integrate, QuadConfig};

/// Component layout of a raw jet.
pub(crate) const PHI: usize = 0;
pub(crate) const PHI_X: usize = 1;
pub(crate) const PHI_XX: usize = 2;
pub(crate) const PHI_XXX: usize = 3;
pub(crate) const PHI_A: usize = 4;
pub(crate) const PHI_XA: usize = 5;
pub(crate) const PHI_XXA: usize = 6;
pub(crate) const PHI_AA: usize = 7;
pub(crate) const PHI_XAA: usize = 8;
pub(crate) const N_COMP: usize = 9;

/// Above this `x` the ray integrand drops the constant term of `exp(cλ^α)`.
const SUBTRACT_ABOVE: f64 = 1.0;
/// Integrands are truncated once their log-envelope falls below this.
const LOG_CUTOFF: f64 = -75.0;
const GAMMA_MIN: f64 = 0.3;

/// `c(α) = -sec(πα/2)` and its first two derivatives in `α`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AlphaConsts {
    pub alpha: f64,
    pub c: f64,
    pub dc: f64,
    pub d2c: f64,
}

impl AlphaConsts {
    pub fn new(alpha: f64) -> Self {
        let q = FRAC_PI_2 * alpha;
        let sec = 1.0 / q.cos();
        let tan = q.tan();
        Self {
            alpha,
            c: -sec,
            dc: -FRAC_PI_2 * sec * tan,
            d2c: -FRAC_PI_2 * FRAC_PI_2 * (sec * tan * tan + sec * sec * sec),
        }
    }

    /// Ray angle for `x > 0`: midpoint of the admissible sector.
    pub fn ray_angle(&self) -> f64 {
        let upper = PI.min(1.5 * PI / self.alpha);
        0.5 * (FRAC_PI_2 + upper)
    }

    /// Real saddle point of `λx + cλ^α` for `x < 0`.
    pub fn saddle(&self, x: f64) -> f64 {
        (x.abs() / (self.c * self.alpha)).powf(1.0 / (self.alpha - 1.0))
    }

    /// Distance `|x|` into the left tail at which `λx + cλ^α` at the saddle
    /// equals `-xi`, so that `φ(x) ≈ exp(-xi)` up to a power factor.
    pub fn left_tail_depth(&self, xi: f64) -> f64 {
        let a = self.alpha;
        let lambda = (xi / (self.c * (a - 1.0))).powf(1.0 / a);
        self.c * a * lambda.powf(a - 1.0)
    }

    /// Returns `(cλ^α, ∂_α(cλ^α), ∂²_α(cλ^α))`.
    #[inline]
    fn exponent_terms(&self, lambda: Complex64) -> (Complex64, Complex64, Complex64) {
        let ln_l = lambda.ln();
        let pow = (ln_l * self.alpha).exp();
        let e = pow * self.c;
        let ea = pow * (ln_l * self.c + self.dc);
        let eaa = pow * (ln_l * ln_l * self.c + ln_l * (2.0 * self.dc) + self.d2c);
        (e, ea, eaa)
    }
}

/// Nine integrals (see the component constants) multiplied by `exp(-log_scale)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RawJet {
    pub log_scale: f64,
    pub c: [f64; N_COMP],
}

#[inline]
fn expm1_complex(z: Complex64) -> Complex64 {
    let s = (0.5 * z.im).sin();
    Complex64::new(
        z.re.exp_m1() * z.im.cos() - 2.0 * s * s,
        z.re.exp() * z.im.sin(),
    )
}

#[inline]
fn fill(
    out: &mut [f64; N_COMP],
    lambda: Complex64,
    base_x: Complex64,
    base_a: Complex64,
    ea: Complex64,
    eaa: Complex64,
    project: impl Fn(Complex64) -> f64,
) {
    let l2 = lambda * lambda;
    let a1 = ea * base_a;
    let a2 = (eaa + ea * ea) * base_a;
    out[PHI] = project(base_x);
    out[PHI_X] = project(lambda * base_x);
    out[PHI_XX] = project(l2 * base_x);
    out[PHI_XXX] = project(l2 * lambda * base_x);
    out[PHI_A] = project(a1);
    out[PHI_XA] = project(lambda * a1);
    out[PHI_XXA] = project(l2 * a1);
    out[PHI_AA] = project(a2);
    out[PHI_XAA] = project(lambda * a2);
}

/// Log of an upper envelope for the integrand components at `λ`, given the
/// real part of the exponent.
#[inline]
fn log_envelope(lambda: Complex64, re_exponent: f64) -> f64 {
    let r = lambda.norm();
    let ln_r = lambda.ln().norm();
    re_exponent + 3.0 * (1.0 + r).ln() + 2.0 * (1.0 + ln_r).ln() + 2.0
}

/// First `t` from `start` (doubling) at which `log_env(t) < LOG_CUTOFF`.
fn find_cutoff(start: f64, log_env: impl Fn(f64) -> f64) -> f64 {
    let mut t = start.max(1e-12);
    for _ in 0..200 {
        if log_env(t) < LOG_CUTOFF {
            return t;
        }
        t *= 2.0;
    }
    t
}

fn geometric_breakpoints(scale: f64, cutoff: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut t = 0.25 * scale;
    while t < cutoff {
        pts.push(t);
        t *= 4.0;
    }
    pts.push(cutoff);
    pts
}

fn vertical_jet(k: &AlphaConsts, x: f64, cfg: &QuadConfig) -> Result<RawJet, QuadError> {
    let alpha = k.alpha;
    let gamma = k.saddle(x).max(GAMMA_MIN);
    let m = gamma * x + k.c * gamma.powf(alpha);
    let curvature = k.c * alpha * (alpha - 1.0) * gamma.powf(alpha - 2.0);
    let width = 1.0 / curvature.sqrt();

    let re_exponent = |s: f64| {
        let lambda = Complex64::new(gamma, s);
        let (e, _, _) = k.exponent_terms(lambda);
        (lambda * x + e).re - m
    };
    let cutoff = find_cutoff(width, |s| {
        log_envelope(Complex64::new(gamma, s), re_exponent(s))
    });
    let bps = geometric_breakpoints(width, cutoff);

    let integrand = |s: f64| {
        let lambda = Complex64::new(gamma, s);
        let (e, ea, eaa) = k.exponent_terms(lambda);
        let w = (lambda * x + e - m).exp();
        let mut out = [0.0; N_COMP];
        fill(&mut out, lambda, w, w, ea, eaa, |z| z.re);
        out
    };
    let r = integrate(integrand, &bps, 1.0, cfg)?;
    let mut c = r.value;
    for v in c.iter_mut() {
        *v /= PI;
    }
    Ok(RawJet { log_scale: m, c })
}

fn ray_jet(k: &AlphaConsts, x: f64, cfg: &QuadConfig) -> Result<RawJet, QuadError> {
    let alpha = k.alpha;
    let omega = k.ray_angle();
    let dir = Complex64::from_polar(1.0, omega);
    let subtract = x > SUBTRACT_ABOVE;
    let (cos_w, cos_aw) = (omega.cos(), (alpha * omega).cos());

    let re_exponent = |r: f64| {
        if subtract {
            x * r * cos_w
        } else {
            x * r * cos_w + k.c * r.powf(alpha) * cos_aw
        }
    };
    let scale = 1.0 / x.max(1.0);
    let cutoff = find_cutoff(scale, |r| log_envelope(dir * r, re_exponent(r)));
    let bps = geometric_breakpoints(scale, cutoff);

    let integrand = |r: f64| {
        let lambda = dir * r;
        let (e, ea, eaa) = k.exponent_terms(lambda);
        let ex = (lambda * x).exp();
        let base_a = dir * ex * e.exp();
        let base_x = if subtract {
            dir * ex * expm1_complex(e)
        } else {
            base_a
        };
        let mut out = [0.0; N_COMP];
        fill(&mut out, lambda, base_x, base_a, ea, eaa, |z| z.im);
        out
    };
    let magnitude = (1.0 + x).powf(-1.0 - alpha);
    let r = integrate(integrand, &bps, magnitude, cfg)?;
    let mut c = r.value;
    for v in c.iter_mut() {
        *v /= PI;
    }
    Ok(RawJet { log_scale: 0.0, c })
}

/// Evaluates all nine integrals at `x`.
pub(crate) fn raw_jet(k: &AlphaConsts, x: f64, cfg: &QuadConfig) -> Result<RawJet, StableError> {
    if !x.is_finite() {
        return Err(StableError::Domain(format!(
            "non-finite evaluation point {x}"
        )));
    }
    let r = if x <= 0.0 {
        vertical_jet(k, x, cfg)
    } else {
        ray_jet(k, x, cfg)
    };
    r.map_err(|source| StableError::Quadrature { x, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_alpha_derivatives_match_differences() {
        let h = 1e-5;
        for &a in &[1.2, 1.5, 1.8] {
            let k = AlphaConsts::new(a);
            let kp = AlphaConsts::new(a + h);
            let km = AlphaConsts::new(a - h);
            assert!(((kp.c - km.c) / (2.0 * h) - k.dc).abs() < 1e-6 * k.dc.abs().max(1.0));
            assert!(((kp.dc - km.dc) / (2.0 * h) - k.d2c).abs() < 1e-5 * k.d2c.abs().max(1.0));
        }
    }

    #[test]
    fn ray_angle_inside_sector() {
        for &a in &[1.01, 1.3, 1.5, 1.8, 1.999] {
            let k = AlphaConsts::new(a);
            let w = k.ray_angle();
            assert!(w > FRAC_PI_2 && w < PI && a * w < 1.5 * PI && a * w > FRAC_PI_2);
        }
    }

    #[test]
    fn both_contours_agree_near_zero() {
        let cfg = QuadConfig::default();
        for &a in &[1.2, 1.5, 1.8] {
            let k = AlphaConsts::new(a);
            let v = vertical_jet(&k, 0.0, &cfg).unwrap();
            let r = ray_jet(&k, 0.0, &cfg).unwrap();
            for j in 0..N_COMP {
                let lhs = v.c[j] * v.log_scale.exp();
                assert!(
                    (lhs - r.c[j]).abs() < 1e-9,
                    "alpha {a} comp {j}: {lhs} vs {}",
                    r.c[j]
                );
            }
        }
    }

    #[test]
    fn subtraction_is_seamless() {
        let cfg = QuadConfig::default();
        let k = AlphaConsts::new(1.5);
        let below = ray_jet(&k, SUBTRACT_ABOVE, &cfg).unwrap();
        let above = ray_jet(&k, SUBTRACT_ABOVE + 1e-12, &cfg).unwrap();
        for j in 0..N_COMP {
            assert!((below.c[j] - above.c[j]).abs() < 1e-9 * (1.0 + below.c[j].abs()));
        }
    }
}
