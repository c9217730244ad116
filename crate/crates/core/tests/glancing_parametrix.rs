use glancing::complex_airy::airy_eval;
use glancing::error::Error;
use glancing::glancing_parametrix::*;
use glancing::symbol_calculus::*;
use glancing::C64;
use proptest::prelude::*;

const H: f64 = 1e-2;
const EPS: f64 = 0.2;
const NY: usize = 32;
const NM: usize = 256;

fn params(m: usize) -> SpectralParams {
    SpectralParams::new(H, H.powf(0.8), EPS, m).unwrap()
}

fn sin_q() -> GridSymbol {
    GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(1.0 + 0.3 * y.sin(), 0.0))
}

fn zero() -> GridSymbol {
    GridSymbol::constant(H, NY, NM, C64::new(0.0, 0.0))
}

fn gaussian_data(p: &SpectralParams) -> ModeFunction {
    let mut f = ModeFunction::zeros(H, NM);
    for j in 0..NM {
        let m = f.mode(j) as f64;
        f.coeffs[j] = C64::new((-(m * H * p.glancing_scale()).powi(2)).exp(), 0.1);
    }
    f
}

#[test]
fn constant_q_matches_exact_mode_dn() {
    let q = GridSymbol::constant(H, 16, NM, C64::new(1.0, 0.0));
    let qt = GridSymbol::constant(H, 16, NM, C64::new(0.0, 0.0));
    for m in [0, 2, 4] {
        let p = params(m);
        let amps = build_amplitudes(p, &q, &qt).unwrap();
        let f = gaussian_data(&p);
        let dn = dn_g1(&f, &amps).unwrap();
        let mut err: f64 = 0.0;
        let mut size: f64 = 0.0;
        for j in 0..NM {
            let eta = H * f.mode(j) as f64;
            let w = C64::new(eta, p.mu) * H.powf(-2.0 / 3.0);
            let exact = C64::new(0.0, -1.0) * H.powf(1.0 / 3.0) * airy_eval(w).log_deriv();
            let want = exact * CutoffSpec::STANDARD.value(eta * p.glancing_scale()) * f.coeffs[j];
            err = err.max((dn.coeffs[j] - want).norm());
            size = size.max(want.norm());
        }
        assert!(err <= 1e-8 * size, "M = {m}: {}", err / size);
    }
}

#[test]
fn first_amplitudes_match_direct_formulas() {
    let p = params(2);
    let amps = build_amplitudes(p, &sin_q(), &zero()).unwrap();
    let ctx = &amps.ctx;
    let ys = y_grid(NY);
    let mut worst: f64 = 0.0;
    let a0 = &amps.a[0];
    let qy = GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(0.3 * y.cos(), 0.0));
    let k = p.mu / H;
    let a1 = GridSymbol::from_fn(H, NY, NM, |_, _| C64::new(0.0, 0.0));
    let mut a1 = a1;
    for i in 0..NY {
        for j in 0..NM {
            let idx = i * NM + j;
            a1.values[idx] = -k * qy.values[idx] * ctx.fsharp.values[idx] * a0.values[idx];
        }
    }
    let da1 = a1.dy(1);
    let mut a2 = a1.clone();
    for idx in 0..NY * NM {
        a2.values[idx] = 0.5
            * (C64::new(0.0, -1.0) * da1.values[idx] - k * qy.values[idx] * ctx.fsharp.values[idx] * a1.values[idx]
                + k * qy.values[idx] * a0.values[idx]);
    }
    for (got, want) in [(&amps.a[1], &a1), (&amps.a[2], &a2)] {
        let scale = want.max_abs();
        assert!(scale > 0.0);
        for idx in 0..NY * NM {
            worst = worst.max((got.values[idx] - want.values[idx]).norm() / scale);
        }
    }
    assert!(worst < 1e-10, "{worst}");
    assert_eq!(ys.len(), NY);
}

#[test]
fn formal_derivative_matches_spectral_derivative() {
    let p = params(2);
    let ctx = Context::new(p, &sin_q(), &zero()).unwrap();
    let cols = ctx.active_columns();
    let c0 = GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(1.0 + 0.2 * y.cos(), 0.1));
    let c1 = GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(0.5 * (2.0 * y).sin(), 0.0));
    let mut s = FormalSum::new();
    s.add_term(0, 0, c0);
    s.add_term(1, 1, c1.clone());
    s.add_term(2, 2, c1);
    let t = 2.0 * H.powf(2.0 / 3.0);
    let formal = formal_dy(&s, &ctx).eval(&ctx, t, &cols);
    let numeric = s.eval(&ctx, t, &cols).dy(1);
    let scale = numeric.max_abs();
    let err = formal.zip(&numeric, |a, b| a - b).unwrap().max_abs();
    assert!(err < 1e-9 * scale, "{}", err / scale);
}

#[test]
fn psi_solves_the_model_ode() {
    let p = params(0);
    let ctx = Context::new(p, &sin_q(), &zero()).unwrap();
    let idx = 5 * NM + NM / 2 + 3;
    let w = ctx.wsharp.values[idx];
    let dt = 1e-4;
    for k in 1..4usize {
        let t = 0.03;
        let at = |t: f64| ctx.psi_at(idx, t, k)[k];
        let d2 = (at(t + dt) - at(t) * 2.0 + at(t - dt)) / (dt * dt);
        let lhs = -H * H * d2 + (w + t) * at(t);
        let rhs = -(k as f64) * H * ctx.psi_at(idx, t, k)[k - 1];
        assert!((lhs - rhs).norm() < 1e-5 * rhs.norm().max(1e-12), "k = {k}: {lhs} vs {rhs}");
    }
}

#[test]
fn recursion_leaves_only_the_top_coefficients() {
    let amps = build_amplitudes(params(4), &sin_q(), &zero()).unwrap();
    assert!(amps.diagnostics.recursion_residual < 1e-12);
    assert!(amps.diagnostics.weight_ratio.is_finite());
    assert!(amps.diagnostics.expansion_ratio.is_finite());
}

#[test]
fn higher_order_lowers_the_residual() {
    let q = sin_q();
    let qt = zero();
    let mut res = Vec::new();
    for m in [0, 2, 4] {
        let p = params(m);
        let amps = build_amplitudes(p, &q, &qt).unwrap();
        let f = gaussian_data(&p);
        let u = assemble_u1(&f, &amps).unwrap();
        let rep = residual_g1(&u, &amps, 0.0).unwrap();
        res.push(rep.res_l2 / f.norm());
    }
    assert!(res[1] < 0.5 * res[0], "{res:?}");
    assert!(res[2] < res[1], "{res:?}");
}

#[test]
fn trace_matches_target_up_to_cutoff_spill() {
    let p = params(2);
    let amps = build_amplitudes(p, &sin_q(), &zero()).unwrap();
    let f = gaussian_data(&p);
    let u = assemble_u1(&f, &amps).unwrap();
    let err = u.field.trace().sub(&u.target).norm();
    assert!(err < 1e-6 * f.norm(), "{}", err / f.norm());
}

#[test]
fn data_outside_the_plateau_gives_no_output() {
    let p = params(2);
    let amps = build_amplitudes(p, &sin_q(), &zero()).unwrap();
    let mut f = ModeFunction::zeros(H, NM);
    for j in 0..NM {
        let eta = H * f.mode(j) as f64;
        if eta.abs() * p.glancing_scale() > 2.5 {
            f.coeffs[j] = C64::new(1.0, -0.5);
        }
    }
    let dn = dn_g1(&f, &amps).unwrap();
    assert!(dn.norm() <= 1e-10 * f.norm());
}

#[test]
fn region_and_band_errors() {
    assert!(matches!(SpectralParams::new(H, 0.5 * H, EPS, 2), Err(Error::InvalidParams(_))));
    let p = SpectralParams::new(H, H.powf(0.5), EPS, 2).unwrap();
    assert_eq!(p.case(), 1);
    assert!(matches!(build_amplitudes(p, &sin_q(), &zero()), Err(Error::Region(_))));
    let neg = GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(y.sin(), 0.0));
    assert!(build_amplitudes(params(1), &neg, &zero()).is_err());
}

#[test]
fn report_serializes_with_fixed_keys() {
    let rep = ResidualReport { h: H, mu: 0.1, eps: EPS, m: 4, res_l2: 1.0, res_h1: 2.0, dn_norm: 3.0 };
    let v = serde_json::to_value(&rep).unwrap();
    for key in ["h", "mu", "eps", "M", "res_l2", "res_h1", "dn_norm"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dn_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let p = params(1);
        let q = GridSymbol::from_fn(H, 16, 128, |y, _| C64::new(1.0 + 0.3 * y.sin(), 0.0));
        let qt = GridSymbol::constant(H, 16, 128, C64::new(0.0, 0.0));
        let amps = build_amplitudes(p, &q, &qt).unwrap();
        let mk = |s: u64| {
            let mut f = ModeFunction::zeros(H, 128);
            for j in 0..128 {
                let x = ((j as u64 * 2654435761 + s) % 1000) as f64 / 1000.0 - 0.5;
                f.coeffs[j] = C64::new(x, 0.3 * x * x);
            }
            f
        };
        let (f, g) = (mk(seed), mk(seed + 17));
        let comb = f.scale(C64::new(a, 0.0)).add(&g.scale(C64::new(b, 0.0)));
        let lhs = dn_g1(&comb, &amps).unwrap();
        let rhs = dn_g1(&f, &amps).unwrap().scale(C64::new(a, 0.0)).add(&dn_g1(&g, &amps).unwrap().scale(C64::new(b, 0.0)));
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn formal_dy_is_linear(s in -3.0f64..3.0) {
        let p = params(1);
        let ctx = Context::new(p, &sin_q(), &zero()).unwrap();
        let c = GridSymbol::from_fn(H, NY, NM, |y, _| C64::new(y.cos(), 0.0));
        let base = FormalSum::psi(1, c);
        let lhs = formal_dy(&base.scaled(C64::new(s, 0.0)), &ctx);
        let rhs = formal_dy(&base, &ctx).scaled(C64::new(s, 0.0));
        for (key, v) in &lhs.terms {
            let w = &rhs.terms[key];
            prop_assert!(v.zip(w, |a, b| a - b).unwrap().max_abs() <= 1e-12 * (1.0 + w.max_abs()));
        }
    }
}
