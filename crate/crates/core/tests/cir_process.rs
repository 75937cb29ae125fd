//! Simulator and Laplace-transform checks for the stable CIR process.

use stable_cir::cir::{
    branching_mechanism, increment_diagnostics, inverse_moments, laplace_transform, mean,
    simulate_path, simulate_with, v_t, PathGrid, Theta,
};
use stable_cir::quadrature::QuadConfig;
use stable_cir::rng::stream;
use stable_cir::CirError;

fn theta0() -> Theta {
    Theta::new(2.0, 1.0, 0.5, 1.5).unwrap()
}

fn cfg() -> QuadConfig {
    QuadConfig::default()
}

#[test]
fn zero_b_branch_is_continuous() {
    let t = Theta::new(1.0, 0.0, 1.0, 1.5).unwrap();
    let eps = Theta { b: 1e-8, ..t };
    let a = v_t(&t, 2.0, 0.5).unwrap();
    let b = v_t(&eps, 2.0, 0.5).unwrap();
    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    let neg = Theta { b: -1e-8, ..t };
    assert!((a - v_t(&neg, 2.0, 0.5).unwrap()).abs() < 1e-5);
}

fn rk4(theta: &Theta, u: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let f = |v: f64| -branching_mechanism(theta, v);
    let mut v = u;
    for _ in 0..steps {
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    v
}

#[test]
fn v_matches_runge_kutta() {
    let t = Theta::new(1.0, 1.0, 1.0, 1.5).unwrap();
    let exact = v_t(&t, 2.0, 0.3).unwrap();
    let numeric = rk4(&t, 2.0, 0.3, 4000);
    assert!((exact - numeric).abs() < 1e-8, "{exact} vs {numeric}");
    let neg = Theta::new(1.0, -0.7, 0.4, 1.8).unwrap();
    let exact = v_t(&neg, 5.0, 1.0).unwrap();
    assert!((exact - rk4(&neg, 5.0, 1.0, 4000)).abs() < 1e-8);
}

#[test]
fn v_satisfies_ode_on_grid() {
    for theta in [theta0(), Theta::new(1.0, -0.5, 1.0, 1.2).unwrap()] {
        for &u in &[0.5, 1.0, 2.0, 8.0] {
            for &t in &[0.1, 0.4, 0.9] {
                let h = 1e-5;
                let dv =
                    (v_t(&theta, u, t + h).unwrap() - v_t(&theta, u, t - h).unwrap()) / (2.0 * h);
                let r = branching_mechanism(&theta, v_t(&theta, u, t).unwrap());
                assert!(
                    (dv + r).abs() < 1e-6 * (1.0 + r.abs()),
                    "theta {theta} u {u} t {t}: {dv} vs {}",
                    -r
                );
            }
        }
    }
}

#[test]
fn v_is_non_increasing_in_time() {
    let theta = Theta::new(1.0, -0.5, 1.0, 1.4).unwrap();
    let u = 3.0 * stable_cir::cir::u0(&theta) + 0.1;
    let mut prev = u;
    for i in 1..=20 {
        let v = v_t(&theta, u, i as f64 / 20.0).unwrap();
        assert!(v <= prev);
        prev = v;
    }
}

#[test]
fn laplace_transform_boundaries() {
    let t = theta0();
    assert_eq!(laplace_transform(&t, 1.0, 0.7, 0.0, &cfg()).unwrap(), 1.0);
    for &u in &[0.1, 1.0, 3.0] {
        let v = laplace_transform(&t, 1.3, 0.0, u, &cfg()).unwrap();
        assert!((v - (-u * 1.3f64).exp()).abs() < 1e-15);
    }
    let mut prev = 1.0;
    for i in 1..=30 {
        let v = laplace_transform(&t, 1.0, 0.6, i as f64 * 0.2, &cfg()).unwrap();
        assert!(v > 0.0 && v < prev);
        prev = v;
    }
    let neg = Theta::new(1.0, -2.0, 0.5, 1.5).unwrap();
    assert!(matches!(
        laplace_transform(&neg, 1.0, 0.5, 1e-3, &cfg()),
        Err(CirError::Domain(_))
    ));
}

#[test]
fn mean_is_derivative_of_laplace_at_zero() {
    let t = theta0();
    for &time in &[0.25, 1.0] {
        let h = 1e-9;
        let lt = laplace_transform(&t, 1.0, time, h, &cfg()).unwrap();
        let numeric = -lt.ln() / h;
        let exact = mean(&t, 1.0, time);
        assert!(
            (numeric - exact).abs() < 1e-3 * exact,
            "{numeric} vs {exact}"
        );
    }
}

#[test]
fn simulated_mean_matches_closed_form() {
    let t = theta0();
    let paths = 20_000;
    let mut rng = stream(11, 0);
    let xs: Vec<f64> = (0..paths)
        .map(|_| {
            *simulate_with(&t, 1.0, 16, 16, &mut rng)
                .unwrap()
                .0
                .last()
                .unwrap()
        })
        .collect();
    let m = xs.iter().sum::<f64>() / paths as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (paths - 1) as f64;
    let se = (var / paths as f64).sqrt();
    let exact = mean(&t, 1.0, 1.0);
    assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn simulator_matches_laplace_oracle_small() {
    // Reduced-size version of the acceptance gate.
    let t = theta0();
    let paths = 20_000;
    let n = 32;
    let mut rng = stream(12, 0);
    let times = [0.25, 0.5, 1.0];
    let us = [0.5, 1.0, 2.0];
    let mut acc = [[0.0f64; 2]; 9];
    for _ in 0..paths {
        let (obs, _) = simulate_with(&t, 1.0, n, 16, &mut rng).unwrap();
        for (ti, &time) in times.iter().enumerate() {
            let x = obs[(time * n as f64).round() as usize];
            for (ui, &u) in us.iter().enumerate() {
                let v = (-u * x).exp();
                acc[3 * ti + ui][0] += v;
                acc[3 * ti + ui][1] += v * v;
            }
        }
    }
    for (ti, &time) in times.iter().enumerate() {
        for (ui, &u) in us.iter().enumerate() {
            let [s, s2] = acc[3 * ti + ui];
            let m = s / paths as f64;
            let se = ((s2 / paths as f64 - m * m) / paths as f64).sqrt();
            let exact = laplace_transform(&t, 1.0, time, u, &cfg()).unwrap();
            assert!(
                (m - exact).abs() < 3.0 * se,
                "t {time} u {u}: {m} vs {exact}"
            );
        }
    }
}

#[test]
fn zero_noise_solves_drift_ode() {
    let t = Theta {
        delta: 0.0,
        ..theta0()
    };
    let x0 = 0.3;
    let exact = t.a / t.b + (x0 - t.a / t.b) * (-t.b).exp();
    let mut errs = Vec::new();
    for sub in [4, 16, 64] {
        let p = simulate_path(&t, x0, 16, sub, 1).unwrap();
        let err = (p.obs[16] - exact).abs();
        assert!(err < 2.0 / (16 * sub) as f64, "substeps {sub}: {err}");
        errs.push(err);
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0]);
}

#[test]
fn flooring_vanishes_with_refinement() {
    let t = Theta::new(0.05, 5.0, 2.0, 1.2).unwrap();
    let n = 16;
    let mut fractions = Vec::new();
    for sub in [1usize, 4, 16, 64] {
        let mut floors = 0;
        for seed in 0..200 {
            let p = simulate_path(&t, 0.05, n, sub, seed).unwrap();
            assert!(p.obs.iter().all(|&x| x >= 0.0));
            floors += p.floor_events;
        }
        fractions.push(floors as f64 / (200 * n * sub) as f64);
    }
    assert!(fractions[0] > 0.0, "{fractions:?}");
    assert!(fractions[3] < fractions[0], "{fractions:?}");
    for w in fractions.windows(2) {
        assert!(w[1] <= w[0], "{fractions:?}");
    }
}

#[test]
fn simulation_is_deterministic() {
    let t = theta0();
    let a = simulate_path(&t, 1.0, 100, 8, 42).unwrap();
    let b = simulate_path(&t, 1.0, 100, 8, 42).unwrap();
    let c = simulate_path(&t, 1.0, 100, 8, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.obs, c.obs);
    assert_eq!(a.obs.len(), 101);
    assert_eq!(a.obs[0], 1.0);
}

#[test]
fn simulation_input_checks() {
    let t = theta0();
    assert!(simulate_path(&t, 1.0, 3, 8, 0).is_err());
    assert!(simulate_path(&t, 0.0, 8, 8, 0).is_err());
    assert!(simulate_path(&t, 1.0, 8, 0, 0).is_err());
    let bad = Theta { alpha: 2.0, ..t };
    assert!(simulate_path(&bad, 1.0, 8, 8, 0).is_err());
    let huge = Theta::new(1.0, -400.0, 0.5, 1.5).unwrap();
    assert!(matches!(
        simulate_path(&huge, 1.0, 8, 8, 0),
        Err(CirError::Overflow { .. })
    ));
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path_5_16.csv");
    let p = simulate_path(&theta0(), 1.0, 16, 4, 5).unwrap();
    p.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,t,x"));
    assert_eq!(lines.count(), 17);
    let meta = std::fs::read_to_string(dir.path().join("path_5_16.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "seed=5"));
    assert!(meta.lines().any(|l| l == "alpha=1.5"));
    let back = PathGrid::read_csv(&path).unwrap();
    assert_eq!(back, p);
}

#[test]
fn increment_moments_scale_with_alpha() {
    let t = theta0();
    let mut paths = Vec::new();
    for k in 7..=12 {
        let n = 1usize << k;
        for r in 0..40 {
            paths.push(simulate_path(&t, 1.0, n, 4, 1000 * k + r).unwrap());
        }
    }
    let rep = increment_diagnostics(&paths, 1.0).unwrap();
    assert_eq!(rep.rows.len(), 6);
    assert!((rep.slope + 1.0 / 1.5).abs() < 0.1, "slope {}", rep.slope);
    let half = increment_diagnostics(&paths, 0.5).unwrap();
    assert!((half.slope + 0.5 / 1.5).abs() < 0.1, "slope {}", half.slope);
    let tiny = increment_diagnostics(&paths, 1e-3).unwrap();
    assert!(tiny.slope.abs() < 0.01);

    let inv = inverse_moments(&paths, 2.0);
    let max = inv.iter().map(|r| r.moment).fold(0.0, f64::max);
    let min = inv.iter().map(|r| r.moment).fold(f64::INFINITY, f64::min);
    assert!(max.is_finite() && max / min < 2.0, "{inv:?}");
}
