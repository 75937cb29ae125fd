//! Globally adaptive Gauss–Kronrod (10/21 point) quadrature for vector-valued
//! integrands on finite intervals.
//!
//! All components share the abscissae, so an integrand that produces several
//! related quantities (a density and its derivatives, say) is evaluated once
//! per node. An interval is refined while any component misses its tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::QuadError;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Number of integrand evaluations per Gauss–Kronrod panel.
pub const NODES_PER_PANEL: usize = 21;

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Absolute tolerance, multiplied by the caller's magnitude hint.
    pub abs_tol: f64,
    /// Relative tolerance, measured against the integral of |integrand|.
    pub rel_tol: f64,
    /// Maximum number of panels before giving up.
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_panels: 2000,
        }
    }
}

impl QuadConfig {
    /// Same configuration with both tolerances multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            abs_tol: self.abs_tol * factor,
            rel_tol: self.rel_tol * factor,
            ..*self
        }
    }
}

/// Integral estimate with per-component error bounds.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub abs_err: [f64; N],
    /// Estimate of the integral of the absolute value of each component.
    pub l1: [f64; N],
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    err: [f64; N],
    l1: [f64; N],
    priority: f64,
}

impl<const N: usize> PartialEq for Panel<N> {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl<const N: usize> Eq for Panel<N> {}
impl<const N: usize> PartialOrd for Panel<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Panel<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn kronrod21<const N: usize, F>(f: &mut F, a: f64, b: f64) -> ([f64; N], [f64; N], [f64; N])
where
    F: FnMut(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    let mut abs = [0.0; N];

    let fc = f(center);
    for j in 0..N {
        kron[j] = fc[j] * WGK[10];
        abs[j] = fc[j].abs() * WGK[10];
    }
    for (i, &x) in XGK.iter().take(10).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for j in 0..N {
            let s = f1[j] + f2[j];
            kron[j] += WGK[i] * s;
            abs[j] += WGK[i] * (f1[j].abs() + f2[j].abs());
            // Gauss nodes are the odd-indexed Kronrod nodes.
            if i % 2 == 1 {
                gauss[j] += WG[i / 2] * s;
            }
        }
    }
    let mut err = [0.0; N];
    for j in 0..N {
        kron[j] *= half;
        gauss[j] *= half;
        abs[j] *= half.abs();
        err[j] = (kron[j] - gauss[j]).abs();
    }
    (kron, err, abs)
}

/// Integrates `f` over the union of consecutive panels defined by
/// `breakpoints` (sorted, at least two points).
///
/// Component `j` is accepted when its summed error estimate is below
/// `max(cfg.abs_tol * magnitude, cfg.rel_tol * l1[j])`.
pub fn integrate<const N: usize, F>(
    mut f: F,
    breakpoints: &[f64],
    magnitude: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult<N>, QuadError>
where
    F: FnMut(f64) -> [f64; N],
{
    if breakpoints.len() < 2 {
        return Err(QuadError::InvalidInterval);
    }
    let mut heap: BinaryHeap<Panel<N>> = BinaryHeap::new();
    let mut evals = 0;
    let mut total = [0.0; N];
    let mut total_err = [0.0; N];
    let mut total_l1 = [0.0; N];

    for w in breakpoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(QuadError::InvalidInterval);
        }
        if b == a {
            continue;
        }
        let (value, err, l1) = kronrod21(&mut f, a, b);
        evals += NODES_PER_PANEL;
        for j in 0..N {
            total[j] += value[j];
            total_err[j] += err[j];
            total_l1[j] += l1[j];
        }
        heap.push(Panel {
            a,
            b,
            value,
            err,
            l1,
            priority: 0.0,
        });
    }

    let tolerances = |l1: &[f64; N]| -> [f64; N] {
        let mut t = [0.0; N];
        for j in 0..N {
            t[j] = (cfg.abs_tol * magnitude).max(cfg.rel_tol * l1[j]);
        }
        t
    };
    let converged = |err: &[f64; N], tol: &[f64; N]| (0..N).all(|j| err[j] <= tol[j]);

    // Priorities depend on the tolerances, which only become known after the
    // first sweep; rebuild the heap once with proper weights.
    let tol = tolerances(&total_l1);
    let rank = |err: &[f64; N], tol: &[f64; N]| -> f64 {
        (0..N)
            .map(|j| err[j] / tol[j].max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    };
    let mut heap: BinaryHeap<Panel<N>> = heap
        .into_iter()
        .map(|mut p| {
            p.priority = rank(&p.err, &tol);
            p
        })
        .collect();

    loop {
        let tol = tolerances(&total_l1);
        if total.iter().chain(total_err.iter()).any(|v| !v.is_finite()) {
            return Err(QuadError::NonFinite);
        }
        if converged(&total_err, &tol) {
            break;
        }
        if heap.len() >= cfg.max_panels {
            let worst = (0..N)
                .map(|j| total_err[j] / tol[j].max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            return Err(QuadError::NotConverged {
                panels: heap.len(),
                error_ratio: worst,
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Cannot bisect further in floating point; accept what we have.
            heap.push(worst);
            break;
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, err, l1) = kronrod21(&mut f, a, b);
            evals += NODES_PER_PANEL;
            for j in 0..N {
                total[j] += value[j];
                total_err[j] += err[j];
                total_l1[j] += l1[j];
            }
            heap.push(Panel {
                a,
                b,
                value,
                err,
                l1,
                priority: rank(&err, &tol),
            });
        }
        for j in 0..N {
            total[j] -= worst.value[j];
            total_err[j] -= worst.err[j];
            total_l1[j] -= worst.l1[j];
        }
    }

    // Re-sum to shed the drift from repeated add/subtract.
    let mut value = [0.0; N];
    let mut abs_err = [0.0; N];
    let mut l1 = [0.0; N];
    for p in heap.iter() {
        for j in 0..N {
            value[j] += p.value[j];
            abs_err[j] += p.err[j];
            l1[j] += p.l1[j];
        }
    }
    Ok(QuadResult {
        value,
        abs_err,
        l1,
        evals,
    })
}

/// Scalar convenience wrapper around [`integrate`] on `[a, b]`.
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi, sign) = if b >= a { (a, b, 1.0) } else { (b, a, -1.0) };
    let r = integrate(|x| [f(x)], &[lo, hi], 1.0, cfg)?;
    Ok(sign * r.value[0])
}
