use glancing::glancing_parametrix::SpectralParams;
use glancing::model_oracle::*;
use glancing::symbol_calculus::{GridSymbol, ModeFunction};
use glancing::C64;
use proptest::prelude::*;

const H: f64 = 1e-2;
const NM: usize = 256;

fn params() -> SpectralParams {
    SpectralParams::new(H, H.powf(0.8), 0.2, 4).unwrap()
}

fn flat(ny: usize) -> (GridSymbol, GridSymbol) {
    (GridSymbol::constant(H, ny, NM, C64::new(1.0, 0.0)), GridSymbol::constant(H, ny, NM, C64::new(0.0, 0.0)))
}

fn wavy(ny: usize) -> (GridSymbol, GridSymbol) {
    (
        GridSymbol::from_fn(H, ny, NM, |y, _| C64::new(1.0 + 0.3 * y.sin(), 0.0)),
        GridSymbol::constant(H, ny, NM, C64::new(0.0, 0.0)),
    )
}

fn sample(seed: u64, modes: std::ops::RangeInclusive<i64>) -> ModeFunction {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut f = ModeFunction::zeros(H, NM);
    for j in 0..NM {
        if modes.contains(&f.mode(j)) {
            f.coeffs[j] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    f
}

#[test]
fn cheb_differentiates_polynomials_exactly() {
    let (x, d) = cheb(8);
    for (i, xi) in x.iter().enumerate() {
        let du: f64 = (0..=8).map(|j| d[i][j] * x[j].powi(5)).sum();
        assert!((du - 5.0 * xi.powi(4)).abs() < 1e-12);
    }
    assert!(x.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn flat_q_matches_exact_airy_quotient() {
    let p = params();
    let (q, qt) = flat(8);
    let f = sample(1, -12..=12);
    let dn = dn_oracle(&f, &q, &qt, &p, &BvpConfig::default()).unwrap();
    for j in 0..NM {
        let m = f.mode(j);
        if m.abs() <= 12 {
            let want = exact_mode_dn(m, &p, 1.0).unwrap() * f.coeffs[j];
            assert!((dn.coeffs[j] - want).norm() <= 1e-6 * f.coeffs[j].norm().max(1e-3), "mode {m}");
        }
    }
}

#[test]
fn refinement_and_height_are_converged() {
    let p = params();
    let (q, qt) = wavy(16);
    let f = sample(2, -10..=10);
    let base = BvpConfig::default();
    let a = dn_oracle(&f, &q, &qt, &p, &base).unwrap();
    let fine = dn_oracle(&f, &q, &qt, &p, &BvpConfig { width_factor: 0.5, ..base }).unwrap();
    assert!(a.sub(&fine).norm() / f.norm() < 1e-6);
    let (t, _) = default_height(&p);
    let tall = dn_oracle(&f, &q, &qt, &p, &BvpConfig { t_max: Some((2.0 * t).min(2.0)), ..base }).unwrap();
    assert!(a.sub(&tall).norm() / f.norm() < 1e-8);
}

#[test]
fn zero_data_gives_zero_solution() {
    let p = params();
    let (q, qt) = wavy(16);
    let s = solve_bvp(&ModeFunction::zeros(H, NM), &q, &qt, &p, &BvpConfig::default()).unwrap();
    assert!(s.u.iter().flatten().all(|v| v.norm() == 0.0));
    assert_eq!(s.dn.norm(), 0.0);
}

#[test]
fn report_is_sane() {
    let p = params();
    let (q, qt) = wavy(16);
    let s = solve_bvp(&sample(3, -8..=8), &q, &qt, &p, &BvpConfig::default()).unwrap();
    assert!(s.report.relative_residual < 1e-10);
    assert!(s.report.iterations > 0 && s.report.iterations < 100);
    assert_eq!(s.report.nodes, s.mesh.len());
    assert_eq!(s.mesh.len(), s.mesh.elements() * s.mesh.degree + 1);
}

#[test]
fn dn_is_bounded_by_symbol_size() {
    let p = params();
    let (q, qt) = wavy(16);
    let f = sample(4, -20..=20);
    let dn = dn_oracle(&f, &q, &qt, &p, &BvpConfig::default()).unwrap();
    // |rho| <= (|eta| + 1.3 mu)^{1/2} plus an h^{1/3} boundary-layer correction
    let bound = (20.0 * H + 1.3 * p.mu).sqrt() + 2.0 * H.powf(1.0 / 3.0);
    assert!(dn.norm() <= bound * f.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn oracle_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, c in -2.0f64..2.0) {
        let p = params();
        let (q, qt) = wavy(8);
        let cfg = BvpConfig::default();
        let f = sample(s1, -6..=6);
        let g = sample(s2, -6..=6);
        let lhs = dn_oracle(&f.add(&g.scale(C64::new(c, 0.0))), &q, &qt, &p, &cfg).unwrap();
        let rhs = dn_oracle(&f, &q, &qt, &p, &cfg).unwrap()
            .add(&dn_oracle(&g, &q, &qt, &p, &cfg).unwrap().scale(C64::new(c, 0.0)));
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-9 * (f.norm() + g.norm()));
    }
}
