use super::{KernelJet, StableLaw};
use crate::error::StableError;

pub(crate) const DEFAULT_STEP: f64 = 0.01;
const X_MAX: f64 = 1e6;

// Stored quantities; each is interpolated with its exact x-derivative.
const N_VALS: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Node {
    /// log φ, h, h', f, f', ∂_α f
    vals: [f64; N_VALS],
    /// their x-derivatives: h, h', h'', f', f'', ∂_x ∂_α f
    ders: [f64; N_VALS],
}

/// Kernel jets tabulated on `x = center + sinh(u)` with uniform `u` spacing,
/// from the density floor up to `1e6`; cubic Hermite interpolation between
/// nodes.
#[derive(Debug, Clone)]
pub struct KernelTable {
    center: f64,
    u_start: f64,
    step: f64,
    nodes: Vec<Node>,
}

impl KernelTable {
    pub fn build(law: &StableLaw, step: f64) -> Result<Self, StableError> {
        let center = law.mode()?;
        let floor = law.floor_quantile()?;
        let u_start = (floor - center).asinh();
        let u_end = (X_MAX - center).asinh();
        let count = ((u_end - u_start) / step).ceil() as usize + 1;
        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let u = u_start + step * i as f64;
            let x = if i == 0 { floor } else { center + u.sinh() };
            let j = law.jet(x)?;
            nodes.push(Node {
                vals: [j.log_density, j.h, j.dh, j.f, j.df, j.fa],
                ders: [j.h, j.dh, j.d2h, j.df, j.d2f, j.dfa],
            });
        }
        Ok(Self {
            center,
            u_start,
            step,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Abscissa of node `i`.
    pub fn node_x(&self, i: usize) -> f64 {
        self.center + (self.u_start + self.step * i as f64).sinh()
    }

    /// Interpolated jet, or `None` outside the tabulated range.
    pub fn interpolate(&self, x: f64) -> Option<KernelJet> {
        let u = (x - self.center).asinh();
        let pos = (u - self.u_start) / self.step;
        if !(pos >= 0.0) {
            return None;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.nodes.len() {
            return None;
        }
        let t = pos - i as f64;
        let (n0, n1) = (&self.nodes[i], &self.nodes[i + 1]);
        let u0 = self.u_start + self.step * i as f64;
        let (j0, j1) = (u0.cosh(), (u0 + self.step).cosh());

        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        // Derivative of the Hermite basis with respect to t.
        let g00 = 6.0 * t2 - 6.0 * t;
        let g10 = 3.0 * t2 - 4.0 * t + 1.0;
        let g01 = -g00;
        let g11 = 3.0 * t2 - 2.0 * t;
        let dudx = 1.0 / u.cosh();

        let mut v = [0.0; N_VALS];
        let mut d = [0.0; N_VALS];
        for k in 0..N_VALS {
            let m0 = n0.ders[k] * j0 * self.step;
            let m1 = n1.ders[k] * j1 * self.step;
            v[k] = h00 * n0.vals[k] + h10 * m0 + h01 * n1.vals[k] + h11 * m1;
            d[k] = (g00 * n0.vals[k] + g10 * m0 + g01 * n1.vals[k] + g11 * m1) * dudx / self.step;
        }
        Some(KernelJet {
            x,
            log_density: v[0],
            h: v[1],
            dh: v[2],
            d2h: d[2],
            f: v[3],
            df: v[4],
            d2f: d[4],
            fa: v[5],
            dfa: d[5],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_reproduce_direct_evaluation() {
        let law = StableLaw::tabulated(1.5).unwrap();
        let table = law.cache().unwrap();
        for i in (0..table.len() - 1).step_by(97) {
            let x = table.node_x(i);
            let t = table.interpolate(x).unwrap();
            let d = law.jet(x).unwrap();
            assert!(
                (t.h - d.h).abs() <= 1e-8 * (1.0 + d.h.abs()),
                "node {i} x {x}"
            );
            assert!((t.f - d.f).abs() <= 1e-8 * (1.0 + d.f.abs()));
            assert!((t.log_density - d.log_density).abs() <= 1e-8 * (1.0 + d.log_density.abs()));
        }
    }

    #[test]
    fn interpolation_between_nodes() {
        let law = StableLaw::tabulated(1.5).unwrap();
        let table = law.cache().unwrap();
        for &x in &[
            -9.3, -4.1, -1.234, -0.5, 0.0, 0.77, 3.3, 17.0, 250.0, 9_000.0,
        ] {
            let t = table.interpolate(x).unwrap();
            let d = law.jet(x).unwrap();
            let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + b.abs());
            assert!(close(t.log_density, d.log_density, 1e-8), "logφ at {x}");
            assert!(close(t.h, d.h, 1e-7), "h at {x}: {} vs {}", t.h, d.h);
            assert!(close(t.dh, d.dh, 1e-6), "h' at {x}");
            assert!(close(t.f, d.f, 1e-7), "f at {x}");
            assert!(close(t.df, d.df, 1e-6), "f' at {x}");
            assert!(close(t.fa, d.fa, 1e-6), "∂αf at {x}");
        }
        assert!(table.interpolate(2e6).is_none());
        assert!(table.interpolate(-1e3).is_none());
    }
}
