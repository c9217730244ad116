//! Exact spectra on the unit disk with constant coefficients.
//!
//! Separation of variables reduces the transmission problem in mode `m` to the
//! zeros of `D_m(lambda) = c1 k1 J_m'(k1) J_m(k2) - c2 k2 J_m(k1) J_m'(k2)` with
//! `k_j^2 = lambda n_j / c_j`. Root finding works with the entire function
//! `D_m / ((k1 k2 / 4)^m / (m!)^2)`, which has real Taylor coefficients in
//! `lambda` and no branch cut; its trivial zero at `lambda = 0` is divided out.

use crate::error::{Error, Result};
use crate::symbol_calculus::CutoffSpec;
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::io::Write;

pub const ORDER_ENVELOPE: i64 = 10_000;
pub const ARG_ENVELOPE: f64 = 1.05e3;

const RESCALE: f64 = 1e200;
const I: C64 = C64 { re: 0.0, im: 1.0 };

fn check_envelope(m: i64, z: C64) -> Result<()> {
    if m.abs() > ORDER_ENVELOPE || !(z.norm() <= ARG_ENVELOPE) {
        return Err(Error::Envelope(format!("J_{m}({z}) outside |m| <= {ORDER_ENVELOPE}, |z| <= {ARG_ENVELOPE}")));
    }
    Ok(())
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn use_series(n: usize, z: C64) -> bool {
    let a = z.norm();
    a <= 12.0 || a * a <= (n + 1) as f64
}

/// `E_k(s) = k! sum_j (-s/4)^j / (j! (k+j)!)` for `k = n, n+1, n+2`.
fn series_scaled(n: usize, s: C64) -> [C64; 3] {
    let mut out = [C64::new(0.0, 0.0); 3];
    for (i, o) in out.iter_mut().enumerate() {
        let k = (n + i) as f64;
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        let mut j = 0.0;
        loop {
            term *= -s / (4.0 * (j + 1.0) * (k + j + 1.0));
            sum += term;
            j += 1.0;
            if term.norm() <= 1e-17 * sum.norm() && 4.0 * j * (k + j) > s.norm() {
                break;
            }
        }
        *o = sum;
    }
    out
}

/// `J_0, J_1` from the large-argument Hankel expansion.
fn hankel_j01(z: C64) -> [C64; 2] {
    let (w, flip) = if z.re < 0.0 { (-z, true) } else { (z, false) };
    let mut out = [C64::new(0.0, 0.0); 2];
    for (nu, o) in out.iter_mut().enumerate() {
        let mu4 = 4.0 * (nu * nu) as f64;
        let (mut p, mut q) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let mut a = C64::new(1.0, 0.0);
        let mut last = f64::INFINITY;
        for k in 1..200 {
            let t = (2 * k - 1) as f64;
            a = a * (mu4 - t * t) / (k as f64 * 8.0 * w);
            let size = a.norm();
            if size > last || size < 1e-17 {
                break;
            }
            last = size;
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 0 {
                p += sign * a;
            } else {
                q += sign * a;
            }
        }
        let chi = w - (nu as f64 / 2.0 + 0.25) * PI;
        let j = (2.0 / (PI * w)).sqrt() * (p * chi.cos() - q * chi.sin());
        *o = if flip && nu == 1 { -j } else { j };
    }
    out
}

/// Backward recurrence values at a fixed set of indices, each with its rescaling count.
struct Miller {
    vals: Vec<(usize, C64, i32)>,
    sum: C64,
    scale: i32,
}

impl Miller {
    fn run(want: &[usize], z: C64) -> Miller {
        let a = z.norm();
        let top = *want.iter().max().unwrap();
        let n = top.max(a.ceil() as usize) + 30 + (10.0 * a.cbrt()).ceil() as usize;
        let (mut f1, mut f0) = (C64::new(0.0, 0.0), C64::new(1e-30, 0.0));
        let mut sum = C64::new(0.0, 0.0);
        let mut scale = 0;
        let mut vals = Vec::with_capacity(want.len());
        let mut k = n;
        loop {
            if want.contains(&k) {
                vals.push((k, f0, scale));
            }
            if k > 0 && k % 2 == 0 {
                sum += 2.0 * f0;
            }
            if k == 0 {
                sum += f0;
                break;
            }
            let fm = 2.0 * k as f64 / z * f0 - f1;
            f1 = f0;
            f0 = fm;
            k -= 1;
            if f0.norm() > RESCALE {
                f0 /= RESCALE;
                f1 /= RESCALE;
                sum /= RESCALE;
                scale += 1;
            }
        }
        Miller { vals, sum, scale }
    }

    fn ln(&self, k: usize) -> C64 {
        let (_, v, c) = self.vals.iter().find(|(i, _, _)| *i == k).unwrap();
        v.ln() + (*c as f64) * RESCALE.ln()
    }

    fn ln_sum(&self) -> C64 {
        self.sum.ln() + (self.scale as f64) * RESCALE.ln()
    }
}

/// `ln J_{n+i}(z)` for `i = 0, 1, 2` by backward recurrence with a separate anchor.
fn miller_logs(n: usize, z: C64) -> [C64; 3] {
    let mut want = vec![0, 1, n, n + 1, n + 2];
    want.dedup();
    let mil = Miller::run(&want, z);
    let base = if z.im.abs() <= 8.0 {
        -mil.ln_sum()
    } else {
        let j01 = if z.norm() <= 20.0 {
            let e = series_scaled(0, z * z);
            [e[0], e[1] * z / 2.0]
        } else {
            hankel_j01(z)
        };
        let a = if j01[0].norm() >= j01[1].norm() { 0 } else { 1 };
        j01[a].ln() - mil.ln(a)
    };
    [base + mil.ln(n), base + mil.ln(n + 1), base + mil.ln(n + 2)]
}

/// `(n+i)! (2/z)^{n+i} J_{n+i}(z)` for `i = 0, 1, 2`: entire and even in `z`, equal to 1 at `z = 0`.
pub fn bessel_scaled(n: usize, z: C64) -> Result<[C64; 3]> {
    check_envelope(n as i64, z)?;
    if use_series(n, z) {
        return Ok(series_scaled(n, z * z));
    }
    let l = miller_logs(n, z);
    let lz = (2.0 / z).ln();
    let mut out = [C64::new(0.0, 0.0); 3];
    for i in 0..3 {
        let k = n + i;
        out[i] = (l[i] + ln_factorial(k) + k as f64 * lz).exp();
    }
    Ok(out)
}

fn j_pair(n: usize, z: C64) -> [C64; 2] {
    if z == C64::new(0.0, 0.0) {
        return [C64::new(if n == 0 { 1.0 } else { 0.0 }, 0.0), C64::new(0.0, 0.0)];
    }
    if use_series(n, z) {
        let e = series_scaled(n, z * z);
        let lz = (z / 2.0).ln();
        let p = (n as f64 * lz - ln_factorial(n)).exp();
        [e[0] * p, e[1] * p * z / (2.0 * (n + 1) as f64)]
    } else {
        let l = miller_logs(n, z);
        [l[0].exp(), l[1].exp()]
    }
}

/// `J_m(z)` for integer order.
pub fn bessel_j(m: i64, z: C64) -> Result<C64> {
    check_envelope(m, z)?;
    let n = m.unsigned_abs() as usize;
    let j = j_pair(n, z)[0];
    Ok(if m < 0 && n % 2 == 1 { -j } else { j })
}

/// `(J_m(z), J_m'(z))`.
pub fn bessel_j_deriv(m: i64, z: C64) -> Result<(C64, C64)> {
    check_envelope(m, z)?;
    let n = m.unsigned_abs() as usize;
    let [j, j1] = j_pair(n, z);
    let d = if z == C64::new(0.0, 0.0) {
        C64::new(if n == 1 { 0.5 } else { 0.0 }, 0.0)
    } else {
        n as f64 / z * j - j1
    };
    Ok(if m < 0 && n % 2 == 1 { (-j, -d) } else { (j, d) })
}

/// `J_m'(z) / J_m(z)` by the continued fraction for `J_{m+1}/J_m`.
pub fn bessel_log_deriv(m: i64, z: C64) -> Result<C64> {
    check_envelope(m, z)?;
    if z == C64::new(0.0, 0.0) {
        return Err(Error::BesselZero { order: m, re: 0.0, im: 0.0 });
    }
    let n = m.unsigned_abs() as usize;
    let a = z.norm();
    let top = n.max(a.ceil() as usize) + 30 + (10.0 * a.cbrt()).ceil() as usize;
    let mut r = C64::new(0.0, 0.0);
    for k in (n..top).rev() {
        r = 1.0 / (2.0 * (k + 1) as f64 / z - r);
    }
    let ld = n as f64 / z - r;
    if !ld.is_finite() || r.norm() > 1e12 {
        return Err(Error::BesselZero { order: m, re: z.re, im: z.im });
    }
    Ok(ld)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionCase {
    C12,
    C13,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiskConfig {
    pub c1: f64,
    pub c2: f64,
    pub n1: f64,
    pub n2: f64,
    pub condition_case: ConditionCase,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14 * a.abs().max(b.abs())
}

impl DiskConfig {
    /// Classifies the coefficients; errors when neither condition holds.
    pub fn new(c1: f64, c2: f64, n1: f64, n2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && n1 > 0.0 && n2 > 0.0) {
            return Err(Error::InvalidParams(format!("coefficients must be positive: c=({c1},{c2}) n=({n1},{n2})")));
        }
        let case = if same(c1, c2) && !same(n1, n2) {
            ConditionCase::C12
        } else if (c1 - c2) * (c1 * n1 - c2 * n2) < 0.0 {
            ConditionCase::C13
        } else {
            return Err(Error::InvalidParams(format!(
                "c=({c1},{c2}) n=({n1},{n2}) satisfies neither c1 = c2, n1 != n2 nor (c1-c2)(c1 n1 - c2 n2) < 0"
            )));
        };
        Ok(DiskConfig { c1, c2, n1, n2, condition_case: case })
    }

    pub fn with_case(c1: f64, c2: f64, n1: f64, n2: f64, case: ConditionCase) -> Result<Self> {
        let cfg = Self::new(c1, c2, n1, n2)?;
        if cfg.condition_case != case {
            return Err(Error::InvalidParams(format!("configuration is {:?}, not {case:?}", cfg.condition_case)));
        }
        Ok(cfg)
    }

    /// `(n1/c1, n2/c2)`.
    pub fn indices(&self) -> (f64, f64) {
        (self.n1 / self.c1, self.n2 / self.c2)
    }

    pub fn glancing_disjoint(&self) -> bool {
        let (a, b) = self.indices();
        !same(a, b)
    }

    /// Leading coefficient of `N(r) ~ tau r^2` on the unit disk.
    pub fn weyl_constant(&self) -> f64 {
        let (a, b) = self.indices();
        (a + b) / 4.0
    }

    fn max_index(&self) -> f64 {
        let (a, b) = self.indices();
        a.max(b)
    }

    /// Zero order of the normalized dispersion function at `lambda = 0`.
    fn trivial_order(&self, n: usize) -> i32 {
        if n == 0 || same(self.c1, self.c2) {
            1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionValue {
    pub re: f64,
    pub im: f64,
    /// `lambda` lies within `1e-6 (1 + |lambda|)` of the negative real axis.
    pub near_branch_cut: bool,
}

impl DispersionValue {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// `D_m(lambda)` with principal square roots `k_j = (lambda n_j / c_j)^{1/2}`.
pub fn dispersion(m: i64, lambda: C64, cfg: &DiskConfig) -> Result<DispersionValue> {
    if lambda == C64::new(0.0, 0.0) {
        return Err(Error::InvalidParams("lambda = 0 is excluded".into()));
    }
    let (a1, a2) = cfg.indices();
    let (k1, k2) = ((lambda * a1).sqrt(), (lambda * a2).sqrt());
    let (j1, d1) = bessel_j_deriv(m, k1)?;
    let (j2, d2) = bessel_j_deriv(m, k2)?;
    let v = cfg.c1 * k1 * d1 * j2 - cfg.c2 * k2 * j1 * d2;
    Ok(DispersionValue {
        re: v.re,
        im: v.im,
        near_branch_cut: lambda.re < 0.0 && lambda.im.abs() <= 1e-6 * (1.0 + lambda.norm()),
    })
}

/// Normalized dispersion function and its `lambda`-derivative.
#[derive(Debug, Clone, Copy)]
pub struct EntireDispersion {
    /// `D_m (m!)^2 (4 / (k1 k2))^m`.
    pub value: C64,
    pub deriv: C64,
    /// Size of the larger of the two cancelling terms.
    pub scale: f64,
}

pub fn dispersion_entire(m: i64, lambda: C64, cfg: &DiskConfig) -> Result<EntireDispersion> {
    let n = m.unsigned_abs() as usize;
    let (a1, a2) = cfg.indices();
    let nf = n as f64;
    let parts = |a: f64| -> Result<[C64; 4]> {
        let s = lambda * a;
        let [e0, e1, e2] = bessel_scaled(n, s.sqrt())?;
        let d0 = -e1 / (4.0 * (nf + 1.0));
        let d1 = -e2 / (4.0 * (nf + 2.0));
        let g = nf * e0 - s / (2.0 * (nf + 1.0)) * e1;
        let dg = nf * d0 - e1 / (2.0 * (nf + 1.0)) - s / (2.0 * (nf + 1.0)) * d1;
        Ok([e0, a * d0, g, a * dg])
    };
    let [e1, de1, g1, dg1] = parts(a1)?;
    let [e2, de2, g2, dg2] = parts(a2)?;
    let t1 = cfg.c1 * g1 * e2;
    let t2 = cfg.c2 * e1 * g2;
    Ok(EntireDispersion {
        value: t1 - t2,
        deriv: cfg.c1 * (dg1 * e2 + g1 * de2) - cfg.c2 * (de1 * g2 + e1 * dg2),
        scale: t1.norm().max(t2.norm()),
    })
}

/// The normalized function with the trivial zero at the origin divided out.
fn deflated(n: usize, lambda: C64, cfg: &DiskConfig) -> Result<(C64, C64, EntireDispersion)> {
    let d = dispersion_entire(n as i64, lambda, cfg)?;
    if cfg.trivial_order(n) == 0 {
        return Ok((d.value, d.deriv, d));
    }
    Ok((d.value / lambda, (d.deriv - d.value / lambda) / lambda, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub re0: f64,
    pub re1: f64,
    pub im0: f64,
    pub im1: f64,
}

impl Rect {
    pub fn new(re0: f64, re1: f64, im0: f64, im1: f64) -> Result<Self> {
        if !(re0 < re1 && im0 < im1) {
            return Err(Error::InvalidParams(format!("degenerate rectangle [{re0},{re1}]x[{im0},{im1}]")));
        }
        Ok(Rect { re0, re1, im0, im1 })
    }

    pub fn center(&self) -> C64 {
        C64::new(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))
    }

    pub fn contains(&self, z: C64, slack: f64) -> bool {
        z.re >= self.re0 - slack && z.re <= self.re1 + slack && z.im >= self.im0 - slack && z.im <= self.im1 + slack
    }

    fn dilate(&self, f: f64) -> Rect {
        let c = self.center();
        let (hw, hh) = (0.5 * f * (self.re1 - self.re0), 0.5 * f * (self.im1 - self.im0));
        Rect { re0: c.re - hw, re1: c.re + hw, im0: c.im - hh, im1: c.im + hh }
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re0, self.im0),
            C64::new(self.re1, self.im0),
            C64::new(self.re1, self.im1),
            C64::new(self.re0, self.im1),
        ]
    }

    fn split(&self, fx: f64, fy: f64) -> [Rect; 4] {
        let x = self.re0 + fx * (self.re1 - self.re0);
        let y = self.im0 + fy * (self.im1 - self.im0);
        [
            Rect { re0: self.re0, re1: x, im0: self.im0, im1: y },
            Rect { re0: x, re1: self.re1, im0: self.im0, im1: y },
            Rect { re0: self.re0, re1: x, im0: y, im1: self.im1 },
            Rect { re0: x, re1: self.re1, im0: y, im1: self.im1 },
        ]
    }

    pub fn size(&self) -> f64 {
        (self.re1 - self.re0).max(self.im1 - self.im0)
    }

    /// Side-length ratio against `o` (max of the two axes).
    pub fn size_ratio(&self, o: &Rect) -> f64 {
        ((self.re1 - self.re0) / (o.re1 - o.re0)).max((self.im1 - self.im0) / (o.im1 - o.im0))
    }

    pub fn area(&self) -> f64 {
        (self.re1 - self.re0) * (self.im1 - self.im0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub m: i64,
    pub re: f64,
    pub im: f64,
    pub multiplicity: i64,
    /// `|D_m(lambda)|` relative to the size of its cancelling terms.
    pub residual: f64,
}

impl Root {
    pub fn lambda(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourRecord {
    pub m: i64,
    pub rect: Rect,
    pub winding: i64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RootSet {
    pub roots: Vec<Root>,
    pub ledger: Vec<ContourRecord>,
}

impl RootSet {
    pub fn multiplicity(&self) -> i64 {
        self.roots.iter().map(|r| r.multiplicity).sum()
    }

    pub fn extend(&mut self, o: RootSet) {
        self.roots.extend(o.roots);
        self.ledger.extend(o.ledger);
    }

    pub fn sort(&mut self) {
        self.roots.sort_by(|a, b| (a.m, a.re, a.im).partial_cmp(&(b.m, b.re, b.im)).unwrap());
    }

    pub fn ledger_digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.ledger {
            h.update(format!("{} {:e} {:e} {:e} {:e} {}\n", r.m, r.rect.re0, r.rect.re1, r.rect.im0, r.rect.im1, r.winding));
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m,re,im,multiplicity,residual")?;
        for r in &self.roots {
            writeln!(w, "{},{:.15e},{:.15e},{},{:.3e}", r.m, r.re, r.im, r.multiplicity, r.residual)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FindOptions {
    pub seed: u64,
    pub max_depth: usize,
    pub retries: usize,
}

impl Default for FindOptions {
    fn default() -> Self {
        FindOptions { seed: 0x5eed, max_depth: 40, retries: 5 }
    }
}

struct Finder<'a> {
    n: usize,
    cfg: &'a DiskConfig,
    rng: ChaCha8Rng,
    opts: FindOptions,
}

impl<'a> Finder<'a> {
    fn new(m: i64, cfg: &'a DiskConfig, opts: FindOptions) -> Self {
        let n = m.unsigned_abs() as usize;
        let rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Finder { n, cfg, rng, opts }
    }

    fn f(&self, z: C64) -> Result<C64> {
        Ok(deflated(self.n, z, self.cfg)?.0)
    }

    fn k_step(&self, a: C64, b: C64) -> f64 {
        let (a1, a2) = self.cfg.indices();
        let d = (b - a).norm();
        [a1, a2]
            .iter()
            .map(|&x| x * d / ((x * a.norm()).sqrt() + (x * b.norm()).sqrt()).max(1e-300))
            .fold(0.0, f64::max)
    }

    /// Total change of argument along `a -> b`, or `None` if a zero sits on the segment.
    fn turn(&self, a: C64, b: C64) -> Result<Option<f64>> {
        let (fa, fb) = (self.f(a)?, self.f(b)?);
        let tol = 1e-11 * (1.0 + a.norm().max(b.norm()));
        let mut stack = vec![(a, fa, b, fb)];
        let mut total = 0.0;
        while let Some((p, fp, q, fq)) = stack.pop() {
            if fp == C64::new(0.0, 0.0) || fq == C64::new(0.0, 0.0) || !fp.is_finite() || !fq.is_finite() {
                return Ok(None);
            }
            let d = (fq / fp).arg();
            if d.abs() <= PI / 4.0 && self.k_step(p, q) <= 0.5 {
                total += d;
                continue;
            }
            if (q - p).norm() < tol {
                return Ok(None);
            }
            let mid = 0.5 * (p + q);
            let fm = self.f(mid)?;
            stack.push((p, fp, mid, fm));
            stack.push((mid, fm, q, fq));
        }
        Ok(Some(total))
    }

    fn winding(&self, r: &Rect) -> Result<Option<i64>> {
        let c = r.corners();
        let mut total = 0.0;
        for i in 0..4 {
            match self.turn(c[i], c[(i + 1) % 4])? {
                Some(t) => total += t,
                None => return Ok(None),
            }
        }
        let w = total / (2.0 * PI);
        if (w - w.round()).abs() > 0.1 {
            return Ok(None);
        }
        Ok(Some(w.round() as i64))
    }

    fn newton(&self, start: C64) -> Result<Option<(C64, f64)>> {
        let mut z = start;
        for _ in 0..60 {
            let (v, d, _) = deflated(self.n, z, self.cfg)?;
            if d == C64::new(0.0, 0.0) || !d.is_finite() {
                return Ok(None);
            }
            let step = v / d;
            z -= step;
            if !z.is_finite() {
                return Ok(None);
            }
            if step.norm() <= 1e-14 * (1.0 + z.norm()) {
                let e = dispersion_entire(self.n as i64, z, self.cfg)?;
                return Ok(Some((z, e.value.norm() / e.scale.max(1e-300))));
            }
        }
        Ok(None)
    }

    fn record(&self, out: &mut RootSet, r: Rect, w: i64) {
        out.ledger.push(ContourRecord { m: self.n as i64, rect: r, winding: w });
    }

    fn solve(&mut self, r: Rect, w: i64, depth: usize, out: &mut RootSet) -> Result<()> {
        self.record(out, r, w);
        if w == 0 {
            return Ok(());
        }
        let tiny = r.size() < 1e-9 * (1.0 + r.center().norm());
        if w == 1 || tiny || depth >= self.opts.max_depth {
            if let Some((z, res)) = self.newton(r.center())? {
                if r.contains(z, 1e-12 * (1.0 + z.norm())) && (w == 1 || tiny || depth >= self.opts.max_depth) {
                    out.roots.push(Root { m: self.n as i64, re: z.re, im: z.im, multiplicity: w, residual: res });
                    return Ok(());
                }
            }
            if tiny || depth >= self.opts.max_depth {
                let z = r.center();
                let e = dispersion_entire(self.n as i64, z, self.cfg)?;
                out.roots.push(Root { m: self.n as i64, re: z.re, im: z.im, multiplicity: w, residual: e.value.norm() / e.scale.max(1e-300) });
                return Ok(());
            }
        }
        for _ in 0..=self.opts.retries {
            let fx = 0.5 + self.rng.gen_range(-0.05..0.05);
            let fy = 0.5 + self.rng.gen_range(-0.05..0.05);
            let kids = r.split(fx, fy);
            let mut ws = [0i64; 4];
            let mut ok = true;
            for (k, c) in kids.iter().enumerate() {
                match self.winding(c)? {
                    Some(v) => ws[k] = v,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && ws.iter().sum::<i64>() == w {
                for (k, c) in kids.iter().enumerate() {
                    self.solve(*c, ws[k], depth + 1, out)?;
                }
                return Ok(());
            }
        }
        Err(Error::ContourRetries(self.opts.retries))
    }

    /// Winding of `r`, dilating about its center when a zero sits on the contour.
    fn outer_winding(&mut self, r: Rect) -> Result<(Rect, i64)> {
        let mut cur = r;
        for _ in 0..=self.opts.retries {
            if let Some(w) = self.winding(&cur)? {
                return Ok((cur, w));
            }
            cur = r.dilate(self.rng.gen_range(1.01..1.05));
        }
        Err(Error::ContourRetries(self.opts.retries))
    }
}

/// Winding number of the normalized `D_m` along `rect` (after dilation if needed).
pub fn winding_number(m: i64, rect: Rect, cfg: &DiskConfig, opts: FindOptions) -> Result<(Rect, i64)> {
    Finder::new(m, cfg, opts).outer_winding(rect)
}

/// Zeros of `D_m` in `rect`, excluding `lambda = 0`.
pub fn find_roots(m: i64, rect: Rect, cfg: &DiskConfig) -> Result<RootSet> {
    find_roots_with(m, rect, cfg, FindOptions::default())
}

pub fn find_roots_with(m: i64, rect: Rect, cfg: &DiskConfig, opts: FindOptions) -> Result<RootSet> {
    let mut fd = Finder::new(m, cfg, opts);
    let (r, w) = fd.outer_winding(rect)?;
    let mut out = RootSet::default();
    fd.solve(r, w, 0, &mut out)?;
    for root in &mut out.roots {
        root.m = m;
    }
    for rec in &mut out.ledger {
        rec.m = m;
    }
    Ok(out)
}

/// Mode cap `ceil(1.2 r max_j (n_j/c_j)^{1/2}) + 10`.
pub fn mode_cap(rmax: f64, cfg: &DiskConfig) -> i64 {
    (1.2 * rmax * cfg.max_index().sqrt()).ceil() as i64 + 10
}

fn degeneracy(m: i64) -> i64 {
    if m == 0 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountRow {
    pub r: f64,
    pub n: i64,
    pub weyl_pred: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountingTable {
    pub rmax: f64,
    pub m_max: i64,
    pub weyl_constant: f64,
    pub rows: Vec<CountRow>,
    /// Winding at `m_max + 5` over the covering square.
    pub tail_winding: i64,
    #[serde(skip)]
    pub roots: RootSet,
}

impl CountingTable {
    pub fn count(&self, r: f64) -> i64 {
        self.roots
            .roots
            .iter()
            .filter(|x| x.lambda().norm() <= r * r)
            .map(|x| x.multiplicity * degeneracy(x.m))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,N,weyl_pred")?;
        for row in &self.rows {
            writeln!(w, "{},{},{:.6}", row.r, row.n, row.weyl_pred)?;
        }
        Ok(())
    }
}

/// Counting function `N(r) = #{lambda : |lambda| <= r^2}` with `e^{+-i m theta}` degeneracy.
pub fn count_te(rmax: f64, cfg: &DiskConfig, opts: FindOptions) -> Result<CountingTable> {
    if !(rmax > 0.0 && rmax <= 60.0) {
        return Err(Error::Envelope(format!("rmax = {rmax} outside (0, 60]")));
    }
    let big = 1.01 * rmax * rmax;
    let square = Rect::new(-big, big, -big, big)?;
    let m_max = mode_cap(rmax, cfg);
    let sets: Vec<RootSet> = (0..=m_max).into_par_iter().map(|m| find_roots_with(m, square, cfg, opts)).collect::<Result<_>>()?;
    let mut roots = RootSet::default();
    for s in sets {
        roots.extend(s);
    }
    roots.sort();
    let tail_winding = winding_number(m_max + 5, square, cfg, opts)?.1;
    let mut radii: Vec<f64> = (1..=rmax.floor() as usize).map(|r| r as f64).collect();
    if radii.last().map_or(true, |&r| r < rmax) {
        radii.push(rmax);
    }
    let tau = cfg.weyl_constant();
    let mut table = CountingTable { rmax, m_max, weyl_constant: tau, rows: Vec::new(), tail_winding, roots };
    table.rows = radii.iter().map(|&r| CountRow { r, n: table.count(r), weyl_pred: tau * r * r }).collect();
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionOptions {
    pub strips: usize,
    /// Half-height of the control rectangle along the positive real axis.
    pub control_height: f64,
    /// Also scan `Re lambda <= -c` when set.
    pub left_c: Option<f64>,
    pub find: FindOptions,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions { strips: 40, control_height: 2.0, left_c: None, find: FindOptions::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionReport {
    pub eps: f64,
    pub c_eps: f64,
    pub rmax: f64,
    pub m_max: i64,
    pub tiles: usize,
    /// Fraction of the region's area covered by the tiles.
    pub coverage: f64,
    pub total_winding: i64,
    pub violations: Vec<Root>,
    pub control_roots: i64,
    /// Largest `|Im lambda| / (Re lambda + 1)^{1/2 + eps}` among control roots.
    pub frontier: f64,
    pub left_winding: Option<i64>,
    pub ledger_digest: String,
    #[serde(skip)]
    pub control: RootSet,
}

fn curve(x: f64, eps: f64, c: f64) -> f64 {
    c * (x + 1.0).powf(0.5 + eps)
}

/// Tiles of `{Re >= 0, |Im| >= C (Re + 1)^{1/2+eps}, |lambda| <= rmax^2}` (upper and lower).
pub fn region_tiles(eps: f64, c_eps: f64, rmax: f64, strips: usize) -> Vec<Rect> {
    let r2 = rmax * rmax;
    let mut out = Vec::new();
    for i in 0..strips {
        let xa = r2 * i as f64 / strips as f64;
        let xb = r2 * (i + 1) as f64 / strips as f64;
        let lo = curve(xb, eps, c_eps);
        let hi = (r2 * r2 - xa * xa).max(0.0).sqrt();
        if lo < hi {
            out.push(Rect { re0: xa, re1: xb, im0: lo, im1: hi });
            out.push(Rect { re0: xa, re1: xb, im0: -hi, im1: -lo });
        }
    }
    out
}

/// Area of the region and of its part covered by `tiles`.
fn region_areas(eps: f64, c_eps: f64, rmax: f64, tiles: &[Rect]) -> (f64, f64) {
    let r2 = rmax * rmax;
    let n = 20000;
    let dx = r2 / n as f64;
    let (mut total, mut covered) = (0.0, 0.0);
    for i in 0..n {
        let x = (i as f64 + 0.5) * dx;
        let (lo, hi) = (curve(x, eps, c_eps), (r2 * r2 - x * x).sqrt());
        total += 2.0 * (hi - lo).max(0.0) * dx;
        for t in tiles.iter().filter(|t| t.re0 <= x && x < t.re1) {
            let (a, b) = (t.im0.abs().min(t.im1.abs()), t.im0.abs().max(t.im1.abs()));
            covered += (b.min(hi) - a.max(lo)).max(0.0) * dx;
        }
    }
    (total, covered)
}

pub fn region_scan(cfg: &DiskConfig, eps: f64, c_eps: f64, rmax: f64, opts: RegionOptions) -> Result<RegionReport> {
    if !(eps > 0.0 && c_eps > 0.0 && rmax > 0.0 && rmax <= 60.0) {
        return Err(Error::InvalidParams(format!("eps = {eps}, C = {c_eps}, rmax = {rmax}")));
    }
    let tiles = region_tiles(eps, c_eps, rmax, opts.strips);
    let m_max = mode_cap(rmax, cfg);
    let (area, covered) = region_areas(eps, c_eps, rmax, &tiles);
    let items: Vec<(i64, Rect)> = (0..=m_max).flat_map(|m| tiles.iter().map(move |t| (m, *t))).collect();
    let found: Vec<RootSet> = items
        .par_iter()
        .map(|&(m, t)| {
            let (r, w) = winding_number(m, t, cfg, opts.find)?;
            if w == 0 {
                Ok(RootSet { roots: Vec::new(), ledger: vec![ContourRecord { m, rect: r, winding: 0 }] })
            } else {
                find_roots_with(m, r, cfg, opts.find)
            }
        })
        .collect::<Result<_>>()?;
    let mut all = RootSet::default();
    for s in found {
        all.extend(s);
    }
    let total_winding = all.ledger.iter().filter(|r| tiles.iter().any(|t| t == &r.rect)).map(|r| r.winding).sum::<i64>();
    let r2 = rmax * rmax;
    let strip = Rect::new(1e-3, r2, -opts.control_height, opts.control_height)?;
    let ctrl: Vec<RootSet> = (0..=m_max).into_par_iter().map(|m| find_roots_with(m, strip, cfg, opts.find)).collect::<Result<_>>()?;
    let mut control = RootSet::default();
    for s in ctrl {
        control.extend(s);
    }
    control.sort();
    let frontier = control
        .roots
        .iter()
        .map(|r| r.im.abs() / curve(r.re.max(0.0), eps, 1.0))
        .fold(0.0, f64::max);
    let left_winding = match opts.left_c {
        Some(c) => {
            let rect = Rect::new(-r2, -c, -r2, r2)?;
            let ws: Vec<i64> = (0..=m_max)
                .into_par_iter()
                .map(|m| winding_number(m, rect, cfg, opts.find).map(|x| x.1))
                .collect::<Result<_>>()?;
            Some(ws.iter().sum())
        }
        None => None,
    };
    let mut digest_set = all.clone();
    digest_set.extend(control.clone());
    Ok(RegionReport {
        eps,
        c_eps,
        rmax,
        m_max,
        tiles: tiles.len(),
        coverage: covered / area,
        total_winding,
        violations: all.roots,
        control_roots: control.multiplicity(),
        frontier,
        left_winding,
        ledger_digest: digest_set.ledger_digest(),
        control,
    })
}

/// Interior DN multiplier `-i h d_t u` (t = inward distance) for `u = J_m(k r) e^{i m theta}`,
/// `k = (1 + i mu)^{1/2} / h`.
pub fn dn_disk_mode(m: i64, h: f64, mu: f64) -> Result<C64> {
    let k = C64::new(1.0, mu).sqrt() / h;
    Ok(I * h * k * bessel_log_deriv(m, k)?)
}

/// `(1 - h^2 m^2 + i mu)^{1/2}` on the branch with nonnegative imaginary part.
pub fn rho_disk(m: i64, h: f64, mu: f64) -> C64 {
    let r = C64::new(1.0 - (h * m as f64).powi(2), mu).sqrt();
    if r.im < 0.0 {
        -r
    } else {
        r
    }
}

/// Glancing-band modes `|h^2 m^2 - 1| <= 2 h^{eps/2}`, nonnegative `m`.
pub fn glancing_band(h: f64, eps: f64) -> std::ops::RangeInclusive<i64> {
    let w = 2.0 * h.powf(eps / 2.0);
    let lo = ((1.0 - w).max(0.0).sqrt() / h).ceil() as i64;
    let hi = ((1.0 + w).sqrt() / h).floor() as i64;
    lo..=hi
}

/// Max over the band of `|dn(m) chi(h^2 m^2)|`, with its mode.
pub fn band_max(h: f64, mu: f64, eps: f64, chi: impl Fn(f64) -> f64 + Sync) -> Result<(f64, i64)> {
    let band: Vec<i64> = glancing_band(h, eps).collect();
    if band.is_empty() {
        return Err(Error::InvalidParams(format!("empty glancing band at h = {h}")));
    }
    let vals: Vec<(f64, i64)> = band
        .par_iter()
        .map(|&m| {
            let w = chi((h * m as f64).powi(2));
            if w == 0.0 {
                return Ok((0.0, m));
            }
            Ok(((dn_disk_mode(m, h, mu)? * w).norm(), m))
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub h: f64,
    pub mu: f64,
    pub band_max: f64,
    pub argmax_mode: i64,
    pub band_modes: usize,
    /// Log-log slope of `band_max` against `h` through this row.
    pub slope_estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlancingScan {
    pub eps: f64,
    pub rows: Vec<ScanRow>,
    /// Least-squares slope over all rows.
    pub slope: f64,
}

impl GlancingScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "h,mu,band_max,slope_estimate")?;
        for r in &self.rows {
            writeln!(w, "{:e},{:e},{:.12e},{:.6}", r.h, r.mu, r.band_max, r.slope_estimate)?;
        }
        Ok(())
    }
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

/// DN norm over the glancing band with `chi0(r) = phi((r - 1) / h^{eps/2})`.
pub fn glancing_norm_scan(h_list: &[f64], mu_rule: impl Fn(f64) -> f64, eps: f64) -> Result<GlancingScan> {
    let mut rows = Vec::new();
    for &h in h_list {
        let mu = mu_rule(h);
        if !(mu.abs() >= h.powf(1.0 - eps) * (1.0 - 1e-12) && mu.abs() <= h.powf(eps) * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!("mu = {mu} outside [h^(1-eps), h^eps] at h = {h}")));
        }
        let width = h.powf(eps / 2.0);
        let (max, m) = band_max(h, mu, eps, |r| CutoffSpec::ENLARGED.value((r - 1.0) / width))?;
        rows.push(ScanRow { h, mu, band_max: max, argmax_mode: m, band_modes: glancing_band(h, eps).count(), slope_estimate: f64::NAN });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.band_max.ln()).collect();
    for i in 1..rows.len() {
        rows[i].slope_estimate = (ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1]);
    }
    let slope = if rows.len() >= 2 { ls_slope(&lx, &ly) } else { f64::NAN };
    Ok(GlancingScan { eps, rows, slope })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeValue {
    pub m: i64,
    pub re: f64,
    pub im: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlancingCheck {
    /// Medium whose glancing mode is tested.
    pub medium: usize,
    pub m: i64,
    pub value_abs: f64,
    /// `|rho|` of the other medium at that mode.
    pub rho_other: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TSymbolReport {
    pub h: f64,
    pub z: [f64; 2],
    pub exponent: i32,
    pub values: Vec<ModeValue>,
    pub min_ratio: f64,
    pub argmin_mode: i64,
    pub floor: f64,
    pub invertible: bool,
    pub glancing: Vec<GlancingCheck>,
}

/// Per-mode `c1 N1 - c2 N2` with `N_j = i h k_j J_m'(k_j) / J_m(k_j)`, `k_j = (z n_j / c_j)^{1/2} / h`.
pub fn t_symbol_report(h: f64, z: C64, cfg: &DiskConfig, floor: f64, eps: f64) -> Result<TSymbolReport> {
    if !(h > 0.0 && h < 1.0) || (z.re - 1.0).abs() > 1e-12 || z.im.abs() < h.powf(1.0 - eps) * (1.0 - 1e-12) {
        return Err(Error::InvalidParams(format!("need Re z = 1 and |Im z| >= h^(1-eps); got z = {z}, h = {h}")));
    }
    let exponent = match cfg.condition_case {
        ConditionCase::C12 => -1,
        ConditionCase::C13 => 1,
    };
    let (a1, a2) = cfg.indices();
    let (k1, k2) = ((z * a1).sqrt() / h, (z * a2).sqrt() / h);
    let m_top = ((2.0 * a1.max(a2).sqrt() + 2.0) / h).ceil() as i64;
    let value = |m: i64| -> Result<C64> {
        let n1 = I * h * k1 * bessel_log_deriv(m, k1)?;
        let n2 = I * h * k2 * bessel_log_deriv(m, k2)?;
        Ok(cfg.c1 * n1 - cfg.c2 * n2)
    };
    let values: Vec<ModeValue> = (0..=m_top)
        .into_par_iter()
        .map(|m| {
            let v = value(m)?;
            let r0 = (h * m as f64).powi(2);
            let bracket = (1.0 + r0 * r0).sqrt();
            Ok(ModeValue { m, re: v.re, im: v.im, ratio: v.norm() / bracket.powf(exponent as f64 / 2.0) })
        })
        .collect::<Result<_>>()?;
    let (min_ratio, argmin_mode) = values.iter().fold((f64::INFINITY, 0), |a, v| if v.ratio < a.0 { (v.ratio, v.m) } else { a });
    let glancing = [(1usize, a1, a2), (2, a2, a1)]
        .iter()
        .map(|&(medium, own, other)| {
            let m = ((z.re * own).sqrt() / h).round() as i64;
            let v = value(m)?;
            let r0 = (h * m as f64).powi(2);
            Ok(GlancingCheck { medium, m, value_abs: v.norm(), rho_other: (z * other - r0).sqrt().norm() })
        })
        .collect::<Result<_>>()?;
    Ok(TSymbolReport { h, z: [z.re, z.im], exponent, values, min_ratio, argmin_mode, floor, invertible: min_ratio > floor, glancing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hankel_and_series_agree_in_overlap() {
        let z = C64::new(18.0, 9.0);
        let e = series_scaled(0, z * z);
        let h = hankel_j01(z);
        assert!((e[0] - h[0]).norm() < 1e-9 * h[0].norm());
        let mz = -z.conj();
        let e = series_scaled(0, mz * mz);
        assert!((e[0] - hankel_j01(mz)[0]).norm() < 1e-9 * e[0].norm());
    }

    #[test]
    fn miller_matches_series_where_both_apply() {
        for &(n, z) in &[(3usize, C64::new(10.0, 1.0)), (0, C64::new(11.0, -2.0)), (20, C64::new(4.0, 3.0))] {
            let l = miller_logs(n, z);
            let s = series_scaled(n, z * z);
            let p = ((z / 2.0).ln() * n as f64 - ln_factorial(n)).exp();
            assert!((l[0].exp() - s[0] * p).norm() < 1e-11 * (s[0] * p).norm(), "n={n}");
        }
    }
}
