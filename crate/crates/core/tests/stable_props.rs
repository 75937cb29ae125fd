//! Property checks on the characteristic function and score kernels.

use proptest::prelude::*;
use stable_cir::stable::StableLaw;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn char_fn_is_bounded_and_conjugate_symmetric(alpha in 1.01f64..1.99, u in -50.0f64..50.0) {
        let law = StableLaw::new(alpha).unwrap();
        let p = law.char_fn(u);
        let q = law.char_fn(-u);
        prop_assert!(p.norm() <= 1.0 + 1e-15);
        prop_assert!((p - q.conj()).norm() < 1e-15);
    }

    #[test]
    fn kernels_are_consistent(alpha in 1.05f64..1.95, x in -3.0f64..200.0) {
        let law = StableLaw::new(alpha).unwrap();
        let k = law.kernels(x).unwrap();
        prop_assert_eq!(k.k, 1.0 + x * k.h);
        prop_assert!(law.density(x).unwrap() > 0.0);
        let j = law.jet(x).unwrap();
        prop_assert!((j.h - law.density_dx(x).unwrap() / law.density(x).unwrap()).abs()
            <= 1e-12 * (1.0 + j.h.abs()));
    }
}

#[test]
fn out_of_range_alpha_rejected() {
    for a in [1.0, 2.0, 0.5, 2.5, f64::NAN] {
        assert!(StableLaw::new(a).is_err());
    }
}
