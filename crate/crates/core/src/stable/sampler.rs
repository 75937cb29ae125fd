use std::f64::consts::{FRAC_PI_2, PI};

use rand::distr::Distribution;
use rand::Rng;

/// Chambers–Mallows–Stuck generator for the totally right-skewed law
/// (`β = 1`, unit scale, zero shift) with characteristic function
/// `exp(-|u|^α (1 - i tan(πα/2) sgn u))`.
#[derive(Debug, Clone, Copy)]
pub struct StableSampler {
    alpha: f64,
    /// `α B = arctan(tan(πα/2))`.
    shift: f64,
    /// `(1 + tan²(πα/2))^{1/(2α)}`.
    scale: f64,
    inv_alpha: f64,
    tail_exp: f64,
}

impl StableSampler {
    pub fn new(alpha: f64) -> Self {
        let t = (FRAC_PI_2 * alpha).tan();
        Self {
            alpha,
            shift: t.atan(),
            scale: (1.0 + t * t).powf(0.5 / alpha),
            inv_alpha: 1.0 / alpha,
            tail_exp: (1.0 - alpha) / alpha,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Transform of a uniform angle `v ∈ (-π/2, π/2)` and a unit exponential `w`.
    #[inline]
    pub fn transform(&self, v: f64, w: f64) -> f64 {
        let av = self.alpha * v + self.shift;
        self.scale * av.sin() / v.cos().powf(self.inv_alpha)
            * ((v - av).cos() / w).powf(self.tail_exp)
    }
}

impl Distribution<f64> for StableSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Open interval keeps cos(v) away from zero.
        let v = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break PI * (u - 0.5);
            }
        };
        let w = -(1.0 - rng.random::<f64>()).ln();
        self.transform(v, w)
    }
}
