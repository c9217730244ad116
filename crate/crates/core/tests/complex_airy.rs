use glancing::complex_airy::selftest;
use glancing::complex_airy::*;
use glancing::C64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn small_grid_selftest_passes() {
    let r = selftest::run(AiryKernel::standard(), 40);
    let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    assert!(r.passed, "failed checks: {failed:?}");
    assert_eq!(r.inversion.len(), 2);
}

#[test]
fn selftest_grid_avoids_real_axis() {
    let g = selftest::grid(120);
    assert!(g.len() >= 10_000);
    assert!(g.iter().all(|z| z.im.abs() > 0.0 && z.norm() <= 20.0));
}

#[test]
fn perturbed_kernel_fails_selftest() {
    let k = AiryKernel::with_b0(AiryKernel::standard().b0() * (1.0 + 1e-3));
    assert!(!selftest::run(&k, 40).passed);
}

#[test]
fn phi_one_is_minus_log_derivative() {
    for z in [c(-3.0, 0.5), c(1.0, 2.0), c(8.0, -4.0)] {
        let p = phi_eval(1, z).unwrap();
        assert!(rel(p, -log_deriv_f(z).unwrap()) <= 1e-13, "{z}");
    }
}

#[test]
fn overflow_is_an_error_not_infinity() {
    assert!(airy(c(-400.0, 300.0), 0).is_err());
    assert!(airy_eval(c(-400.0, 300.0)).log_deriv().is_finite());
}

proptest! {
    #[test]
    fn conjugate_reflection(x in -18.0f64..18.0, y in 0.05f64..18.0) {
        let a = airy_eval(c(x, y));
        let b = airy_eval(c(x, -y));
        prop_assert!(rel(b.log_deriv(), a.log_deriv().conj()) <= 1e-12);
        prop_assert!(rel(b.xi, a.xi.conj()) <= 1e-12 || (b.xi - a.xi.conj()).norm() <= 1e-12);
        prop_assert!(rel(b.mantissa, a.mantissa.conj()) <= 1e-12);
    }

    #[test]
    fn riccati_equation(x in -15.0f64..15.0, y in 0.5f64..15.0) {
        let z = c(x, y);
        let d = 1e-4;
        let f = |w: C64| log_deriv_f(w).unwrap();
        let fp = (f(z + d) - f(z - d)) / (2.0 * d);
        let expect = z - f(z) * f(z);
        prop_assert!((fp - expect).norm() <= 1e-6 * (1.0 + expect.norm()), "{fp} vs {expect}");
    }

    #[test]
    fn connection_formula(x in -6.0f64..6.0, y in -6.0f64..6.0) {
        let z = c(x, y);
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        let s = airy(z, 0).unwrap() + w * airy(w * z, 0).unwrap() + w * w * airy(w * w * z, 0).unwrap();
        let scale = airy(z, 0).unwrap().norm().max(airy(w * z, 0).unwrap().norm()).max(airy(w * w * z, 0).unwrap().norm());
        prop_assert!(s.norm() <= 1e-12 * scale);
    }

    #[test]
    fn rotations_match_direct_evaluation(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let z = c(x, y);
        for s in [Sign::Plus, Sign::Minus] {
            let r = airy_rotated(z, s);
            let d = airy_eval(z * s.rotation());
            prop_assert!(rel(r.log_deriv(), d.log_deriv()) <= 1e-12);
        }
    }

    #[test]
    fn psi_two_routes(x in -4.0f64..4.0, y in 0.3f64..4.0, t in -2.0f64..2.0, k in 0usize..4) {
        let z = c(x, y);
        let direct = airy(z + t, k).unwrap() / airy(z, 0).unwrap();
        prop_assert!(rel(psi(t, z, k).unwrap(), direct) <= 1e-10);
    }
}
