//! Semiclassical quantization on the circle.
//!
//! Symbols are sampled on a periodic `y` grid of `ny` points times the mode
//! grid `eta = h m`, `m` in `[-nm/2, nm/2)`. Quantization pairs `a(y, h m)`
//! with `e^{i m y}`, so that `Op_h(eta) = -i h d/dy`. Outputs are projected
//! back onto the same mode window.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
/// Highest `eta`-derivative order the fourth-order stencils are trusted for.
pub const ETA_DERIVATIVE_BUDGET: usize = 6;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Forward DFT normalized by `1/n`; index `k` holds frequency `k` for `k < n/2`, `k - n` otherwise.
pub fn fft_coeffs(v: &[C64]) -> Vec<C64> {
    let mut buf = v.to_vec();
    plan(v.len(), false).process(&mut buf);
    let s = 1.0 / v.len() as f64;
    buf.iter_mut().for_each(|x| *x *= s);
    buf
}

pub fn ifft_values(c: &[C64]) -> Vec<C64> {
    let mut buf = c.to_vec();
    plan(c.len(), true).process(&mut buf);
    buf
}

pub fn freq(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// `d^alpha/dy^alpha` of periodic samples, spectrally.
pub fn spectral_dy(v: &[C64], alpha: usize) -> Vec<C64> {
    if alpha == 0 {
        return v.to_vec();
    }
    let n = v.len();
    let mut c = fft_coeffs(v);
    for (k, ck) in c.iter_mut().enumerate() {
        let f = freq(k, n);
        if n % 2 == 0 && k == n / 2 && alpha % 2 == 1 {
            *ck = ZERO;
        } else {
            *ck *= C64::new(0.0, f as f64).powu(alpha as u32);
        }
    }
    ifft_values(&c)
}

pub fn y_grid(ny: usize) -> Vec<f64> {
    (0..ny).map(|i| 2.0 * PI * i as f64 / ny as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolClass {
    pub k: f64,
    pub delta: f64,
}

/// `a(y_i, h m_j)` stored row-major as `values[i * nm + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSymbol {
    pub h: f64,
    pub ny: usize,
    pub nm: usize,
    pub values: Vec<C64>,
    pub class: Option<SymbolClass>,
}

impl GridSymbol {
    pub fn from_fn(h: f64, ny: usize, nm: usize, f: impl Fn(f64, f64) -> C64) -> Self {
        let ys = y_grid(ny);
        let mut values = Vec::with_capacity(ny * nm);
        for &y in &ys {
            for j in 0..nm {
                values.push(f(y, h * mode_of(j, nm) as f64));
            }
        }
        GridSymbol { h, ny, nm, values, class: None }
    }

    pub fn constant(h: f64, ny: usize, nm: usize, c: C64) -> Self {
        GridSymbol { h, ny, nm, values: vec![c; ny * nm], class: None }
    }

    pub fn with_class(mut self, k: f64, delta: f64) -> Self {
        self.class = Some(SymbolClass { k, delta });
        self
    }

    pub fn mode(&self, j: usize) -> i64 {
        mode_of(j, self.nm)
    }

    pub fn eta(&self, j: usize) -> f64 {
        self.h * self.mode(j) as f64
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.nm + j]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.ny).map(|i| self.get(i, j)).collect()
    }

    fn same_grid(&self, o: &GridSymbol) -> Result<()> {
        if self.ny != o.ny || self.nm != o.nm || (self.h - o.h).abs() > 1e-15 * self.h {
            return Err(Error::GridMismatch(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.ny, self.nm, self.h, o.ny, o.nm, o.h
            )));
        }
        Ok(())
    }

    pub fn zip(&self, o: &GridSymbol, f: impl Fn(C64, C64) -> C64) -> Result<GridSymbol> {
        self.same_grid(o)?;
        let values = self.values.iter().zip(&o.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(GridSymbol { values, class: None, ..*self })
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> GridSymbol {
        GridSymbol { values: self.values.iter().map(|&a| f(a)).collect(), class: None, ..*self }
    }

    pub fn dy(&self, alpha: usize) -> GridSymbol {
        let mut out = self.clone();
        out.class = None;
        for j in 0..self.nm {
            let d = spectral_dy(&self.column(j), alpha);
            for (i, v) in d.into_iter().enumerate() {
                out.values[i * self.nm + j] = v;
            }
        }
        out
    }

    /// One `eta`-derivative by fourth-order differences, one-sided near the window edges.
    pub fn deta(&self) -> GridSymbol {
        let mut out = self.clone();
        out.class = None;
        for i in 0..self.ny {
            let row = &self.values[i * self.nm..(i + 1) * self.nm];
            let d = diff4(row, self.h);
            out.values[i * self.nm..(i + 1) * self.nm].copy_from_slice(&d);
        }
        out
    }

    pub fn deta_n(&self, alpha: usize) -> GridSymbol {
        let mut out = self.clone();
        for _ in 0..alpha {
            out = out.deta();
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Max over the grid of `|d_y^alpha a| / (h^{-delta alpha} <eta>^k)` for `alpha <= 4`.
    pub fn class_ratios(&self) -> Option<[f64; 5]> {
        let c = self.class?;
        let mut out = [0.0; 5];
        for (alpha, slot) in out.iter_mut().enumerate() {
            let d = self.dy(alpha);
            for i in 0..self.ny {
                for j in 0..self.nm {
                    let eta = self.eta(j);
                    let w = self.h.powf(-c.delta * alpha as f64) * (1.0 + eta * eta).sqrt().powf(c.k);
                    *slot = f64::max(*slot, d.get(i, j).norm() / w);
                }
            }
        }
        Some(out)
    }

    /// CSV with columns `y, eta, re, im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,eta,re,im")?;
        let ys = y_grid(self.ny);
        for (i, y) in ys.iter().enumerate() {
            for j in 0..self.nm {
                let v = self.get(i, j);
                writeln!(w, "{},{},{},{}", y, self.eta(j), v.re, v.im)?;
            }
        }
        Ok(())
    }
}

pub fn mode_of(j: usize, nm: usize) -> i64 {
    j as i64 - (nm / 2) as i64
}

fn diff4(v: &[C64], h: f64) -> Vec<C64> {
    let n = v.len();
    let mut d = vec![ZERO; n];
    if n < 5 {
        for k in 0..n {
            let (a, b) = if k == 0 { (0, 1.min(n - 1)) } else if k == n - 1 { (n - 2, n - 1) } else { (k - 1, k + 1) };
            d[k] = if b > a { (v[b] - v[a]) / (h * (b - a) as f64) } else { ZERO };
        }
        return d;
    }
    for k in 0..n {
        d[k] = if k >= 2 && k + 2 < n {
            (v[k - 2] - v[k - 1] * 8.0 + v[k + 1] * 8.0 - v[k + 2]) / (12.0 * h)
        } else if k == 0 {
            stencil(&v[0..5], [-25.0, 48.0, -36.0, 16.0, -3.0], h)
        } else if k == 1 {
            stencil(&v[0..5], [-3.0, -10.0, 18.0, -6.0, 1.0], h)
        } else if k == n - 2 {
            stencil(&v[n - 5..n], [-1.0, 6.0, -18.0, 10.0, 3.0], h)
        } else {
            stencil(&v[n - 5..n], [3.0, -16.0, 36.0, -48.0, 25.0], h)
        };
    }
    d
}

fn stencil(s: &[C64], w: [f64; 5], h: f64) -> C64 {
    s.iter().zip(w).map(|(&x, c)| x * c).sum::<C64>() / (12.0 * h)
}
/// Boundary data in mode form, `f(y) = sum_m c_m e^{i m y}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    pub h: f64,
    pub coeffs: Vec<C64>,
}

impl ModeFunction {
    pub fn zeros(h: f64, nm: usize) -> Self {
        ModeFunction { h, coeffs: vec![ZERO; nm] }
    }

    pub fn single(h: f64, nm: usize, m: i64) -> Self {
        let mut f = Self::zeros(h, nm);
        f.coeffs[(m + (nm / 2) as i64) as usize] = C64::new(1.0, 0.0);
        f
    }

    pub fn nm(&self) -> usize {
        self.coeffs.len()
    }

    pub fn mode(&self, j: usize) -> i64 {
        mode_of(j, self.nm())
    }

    pub fn coeff(&self, m: i64) -> C64 {
        let j = m + (self.nm() / 2) as i64;
        if j < 0 || j as usize >= self.nm() {
            ZERO
        } else {
            self.coeffs[j as usize]
        }
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Samples on `ny >= nm` equispaced points.
    pub fn to_grid(&self, ny: usize) -> Vec<C64> {
        let mut c = vec![ZERO; ny];
        for (j, &v) in self.coeffs.iter().enumerate() {
            let m = self.mode(j);
            c[m.rem_euclid(ny as i64) as usize] += v;
        }
        ifft_values(&c)
    }

    /// Root-mean-square of grid samples, equal to `norm()` when `ny >= nm`.
    pub fn grid_norm(&self, ny: usize) -> f64 {
        let g = self.to_grid(ny);
        (g.iter().map(|v| v.norm_sqr()).sum::<f64>() / ny as f64).sqrt()
    }

    pub fn sub(&self, o: &ModeFunction) -> ModeFunction {
        ModeFunction { h: self.h, coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, o: &ModeFunction) -> ModeFunction {
        ModeFunction { h: self.h, coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, s: C64) -> ModeFunction {
        ModeFunction { h: self.h, coeffs: self.coeffs.iter().map(|a| a * s).collect() }
    }

    pub fn as_vector(&self) -> nalgebra::DVector<C64> {
        nalgebra::DVector::from_column_slice(&self.coeffs)
    }
}

/// Per-mode `y`-spectra of a symbol: entry `[j][k]` is the `k`-th Fourier coefficient of `a(., h m_j)`.
pub fn symbol_spectra(a: &GridSymbol) -> Vec<Vec<C64>> {
    (0..a.nm).map(|j| fft_coeffs(&a.column(j))).collect()
}

fn check_grid(a: &GridSymbol, f: &ModeFunction) -> Result<()> {
    if a.nm != f.nm() || (a.h - f.h).abs() > 1e-15 * a.h {
        return Err(Error::GridMismatch(format!("symbol ({}, {}) vs function ({}, {})", a.nm, a.h, f.nm(), f.h)));
    }
    if a.ny < 2 {
        return Err(Error::GridMismatch("need at least two y points".into()));
    }
    Ok(())
}

/// `Op_h(a) f`, projected onto the mode window of `f`.
pub fn quantize(a: &GridSymbol, f: &ModeFunction) -> Result<ModeFunction> {
    check_grid(a, f)?;
    let nm = a.nm;
    let half = (nm / 2) as i64;
    let mut out = vec![ZERO; nm];
    for j in 0..nm {
        let fm = f.coeffs[j];
        if fm == ZERO {
            continue;
        }
        let spec = fft_coeffs(&a.column(j));
        let m = a.mode(j);
        for (k, &ak) in spec.iter().enumerate() {
            let n = m + freq(k, a.ny);
            let idx = n + half;
            if idx >= 0 && (idx as usize) < nm {
                out[idx as usize] += ak * fm;
            }
        }
    }
    Ok(ModeFunction { h: f.h, coeffs: out })
}

/// Dense matrix of `Op_h(a)` on the mode window.
pub fn operator_matrix(a: &GridSymbol) -> DMatrix<C64> {
    let nm = a.nm;
    let half = (nm / 2) as i64;
    let mut mat = DMatrix::from_element(nm, nm, ZERO);
    for j in 0..nm {
        let spec = fft_coeffs(&a.column(j));
        let m = a.mode(j);
        for (k, &ak) in spec.iter().enumerate() {
            let idx = m + freq(k, a.ny) + half;
            if idx >= 0 && (idx as usize) < nm {
                mat[(idx as usize, j)] += ak;
            }
        }
    }
    mat
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub symbol: GridSymbol,
    pub warning: Option<String>,
}

/// `sum_{alpha <= M} ((-i h)^alpha / alpha!) d_eta^alpha a * d_y^alpha b`.
pub fn compose_expansion(a: &GridSymbol, b: &GridSymbol, m: usize) -> Result<Composition> {
    a.same_grid(b)?;
    let warning = (m > ETA_DERIVATIVE_BUDGET || a.nm < 5 * (m + 1))
        .then(|| format!("order {m} exceeds the eta-derivative budget of this grid"));
    let mut acc = GridSymbol { class: None, ..a.clone() };
    acc.values.iter_mut().for_each(|v| *v = ZERO);
    let mut da = a.clone();
    let mut coef = C64::new(1.0, 0.0);
    for alpha in 0..=m {
        if alpha > 0 {
            da = da.deta();
            coef *= C64::new(0.0, -a.h) / alpha as f64;
        }
        let db = b.dy(alpha);
        for ((s, &x), &y) in acc.values.iter_mut().zip(&da.values).zip(&db.values) {
            *s += coef * x * y;
        }
    }
    Ok(Composition { symbol: acc, warning })
}

/// `|| Op_h(a) Op_h(b) - Op_h(a #_M b) ||` on the mode window.
pub fn composition_remainder(a: &GridSymbol, b: &GridSymbol, m: usize) -> Result<f64> {
    let c = compose_expansion(a, b, m)?.symbol;
    Ok(op_norm(&(operator_matrix(a) * operator_matrix(b) - operator_matrix(&c))))
}

/// Largest singular value.
pub fn op_norm(a: &DMatrix<C64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Bump equal to 1 for `|x - center| <= plateau` and 0 for `|x - center| >= support`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CutoffSpec {
    pub center: f64,
    pub plateau: f64,
    pub support: f64,
}

impl CutoffSpec {
    pub const STANDARD: CutoffSpec = CutoffSpec { center: 0.0, plateau: 0.5, support: 1.0 };
    pub const ENLARGED: CutoffSpec = CutoffSpec { center: 0.0, plateau: 1.0, support: 2.0 };

    pub fn value(&self, x: f64) -> f64 {
        let s = (x - self.center).abs();
        if s <= self.plateau {
            1.0
        } else if s >= self.support {
            0.0
        } else {
            let u = (s - self.plateau) / (self.support - self.plateau);
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    }
}

pub fn make_cutoff(spec: CutoffSpec) -> Result<impl Fn(f64) -> f64> {
    if !(spec.plateau < spec.support) || spec.plateau < 0.0 {
        return Err(Error::InvalidParams(format!("plateau {} must be below support {}", spec.plateau, spec.support)));
    }
    Ok(move |x| spec.value(x))
}

/// The cutoff as an `eta`-only symbol evaluated at `scale * eta`.
pub fn cutoff_symbol(spec: CutoffSpec, h: f64, ny: usize, nm: usize, scale: f64) -> Result<GridSymbol> {
    let f = make_cutoff(spec)?;
    Ok(GridSymbol::from_fn(h, ny, nm, |_, eta| C64::new(f(scale * eta), 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_symbol() {
        let a = GridSymbol::constant(0.1, 16, 16, c(1.0, 0.0));
        let f = ModeFunction { h: 0.1, coeffs: (0..16).map(|k| c(k as f64, -0.5)).collect() };
        assert_eq!(quantize(&a, &f).unwrap().coeffs.iter().zip(&f.coeffs).filter(|(x, y)| (*x - *y).norm() > 1e-14).count(), 0);
    }

    #[test]
    fn eta_is_minus_i_h_dy() {
        let h = 0.05;
        let a = GridSymbol::from_fn(h, 16, 16, |_, eta| c(eta, 0.0));
        for m in -8..8 {
            let g = quantize(&a, &ModeFunction::single(h, 16, m)).unwrap();
            assert!((g.coeff(m) - h * m as f64).norm() < 1e-15);
            assert!(g.norm() - (h * m as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn multiplication_by_exponential_shifts_modes() {
        let a = GridSymbol::from_fn(0.1, 16, 16, |y, _| C64::from_polar(1.0, y));
        for m in -8..7 {
            let g = quantize(&a, &ModeFunction::single(0.1, 16, m)).unwrap();
            assert!((g.coeff(m + 1) - 1.0).norm() < 1e-14);
            assert!((g.norm() - 1.0).abs() < 1e-14);
        }
        let g = quantize(&a, &ModeFunction::single(0.1, 16, 7)).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn quantize_matches_direct_summation() {
        let (h, ny, nm) = (0.2, 16, 16);
        let a = GridSymbol::from_fn(h, ny, nm, |y, eta| c(y.cos() * eta, (2.0 * y).sin() + eta * eta));
        let f = ModeFunction { h, coeffs: (0..nm).map(|k| c((k as f64).sin(), (k as f64 * 0.3).cos())).collect() };
        let g = quantize(&a, &f).unwrap();
        let fine = 64;
        let direct: Vec<C64> = y_grid(fine)
            .iter()
            .map(|&y| {
                (0..nm)
                    .map(|j| {
                        let eta = h * mode_of(j, nm) as f64;
                        c(y.cos() * eta, (2.0 * y).sin() + eta * eta) * f.coeffs[j] * C64::from_polar(1.0, mode_of(j, nm) as f64 * y)
                    })
                    .sum()
            })
            .collect();
        let spec = fft_coeffs(&direct);
        for j in 0..nm {
            let m = mode_of(j, nm);
            assert!((spec[m.rem_euclid(fine as i64) as usize] - g.coeffs[j]).norm() < 1e-13);
        }
        let mat = operator_matrix(&a);
        let via = &mat * f.as_vector();
        for j in 0..nm {
            assert!((via[j] - g.coeffs[j]).norm() < 1e-13);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = GridSymbol::constant(0.1, 16, 16, c(1.0, 0.0));
        assert!(quantize(&a, &ModeFunction::zeros(0.1, 8)).is_err());
        assert!(quantize(&a, &ModeFunction::zeros(0.2, 16)).is_err());
        let b = GridSymbol::constant(0.1, 8, 16, c(1.0, 0.0));
        assert!(compose_expansion(&a, &b, 1).is_err());
    }

    #[test]
    fn compose_with_one_returns_a() {
        let a = GridSymbol::from_fn(0.1, 16, 32, |y, eta| c(y.sin() * eta.exp(), eta));
        let one = GridSymbol::constant(0.1, 16, 32, c(1.0, 0.0));
        let r = compose_expansion(&a, &one, 3).unwrap();
        assert!(r.symbol.values.iter().zip(&a.values).all(|(x, y)| (x - y).norm() < 1e-12));
        assert!(r.warning.is_none());
    }

    #[test]
    fn compose_eta_with_exponential() {
        let h = 0.1;
        let a = GridSymbol::from_fn(h, 16, 16, |_, eta| c(eta, 0.0));
        let b = GridSymbol::from_fn(h, 16, 16, |y, _| C64::from_polar(1.0, y));
        let r = compose_expansion(&a, &b, 1).unwrap().symbol;
        let expect = GridSymbol::from_fn(h, 16, 16, |y, eta| C64::from_polar(1.0, y) * (eta + h));
        assert!(r.values.iter().zip(&expect.values).all(|(x, y)| (x - y).norm() < 1e-12));
        let ab = operator_matrix(&a) * operator_matrix(&b);
        let op = operator_matrix(&r);
        assert!(op_norm(&(ab - op)) < 1e-12);
    }

    #[test]
    fn compose_warns_past_budget() {
        let a = GridSymbol::constant(0.1, 8, 16, c(1.0, 0.0));
        assert!(compose_expansion(&a, &a, 7).unwrap().warning.is_some());
    }

    #[test]
    fn norms_of_simple_operators() {
        let id = DMatrix::<C64>::identity(12, 12);
        assert!((op_norm(&id) - 1.0).abs() < 1e-14);
        let a = GridSymbol::constant(0.1, 16, 16, c(0.6, -0.8) * 3.0);
        assert!((op_norm(&operator_matrix(&a)) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn cutoff_values() {
        let f = make_cutoff(CutoffSpec::STANDARD).unwrap();
        assert_eq!(f(0.0), 1.0);
        assert_eq!(f(0.5), 1.0);
        assert_eq!(f(1.5), 0.0);
        assert_eq!(f(-1.0), 0.0);
        let v = f(0.75);
        assert!(v > 0.0 && v < 1.0);
        assert!((v - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-15);
        assert!(f(0.7) > f(0.75) && f(0.75) > f(0.8));
        assert!(make_cutoff(CutoffSpec { center: 0.0, plateau: 1.0, support: 1.0 }).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let a = GridSymbol::constant(0.1, 2, 4, c(1.0, 2.0));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 9);
        assert!(s.starts_with("y,eta,re,im\n"));
    }

    #[test]
    fn parseval() {
        let f = ModeFunction { h: 0.1, coeffs: (0..32).map(|k| c((k as f64).cos(), 1.0 / (1.0 + k as f64))).collect() };
        assert!((f.grid_norm(64) - f.norm()).abs() < 1e-12 * f.norm());
        assert!((f.grid_norm(32) - f.norm()).abs() < 1e-12 * f.norm());
    }

    #[test]
    fn eta_derivative_is_fourth_order() {
        let errs: Vec<f64> = [0.02, 0.01]
            .iter()
            .map(|&h| {
                let nm = (4.0 / h) as usize;
                let a = GridSymbol::from_fn(h, 4, nm, |_, eta| c(eta.sin(), 0.0));
                let d = a.deta();
                (0..nm).map(|j| (d.get(0, j).re - a.eta(j).cos()).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] / errs[1] > 12.0, "{errs:?}");
    }
}

/// `Op_h(a)` stored as per-column `y`-spectra, applied in `O(nm ny)`.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub nm: usize,
    pub ny: usize,
    spectra: Vec<Vec<C64>>,
    nonzero: Vec<bool>,
}

impl ModeOperator {
    pub fn new(a: &GridSymbol) -> Self {
        let spectra = symbol_spectra(a);
        let nonzero = spectra.iter().map(|s| s.iter().any(|&v| v != ZERO)).collect();
        ModeOperator { nm: a.nm, ny: a.ny, spectra, nonzero }
    }

    /// Entry `(j + k, j)` for the `k`-th Fourier coefficient.
    pub fn diagonal(&self) -> Vec<C64> {
        self.spectra.iter().map(|s| s[0]).collect()
    }

    pub fn is_zero(&self) -> bool {
        !self.nonzero.iter().any(|&b| b)
    }

    /// `out += s Op_h(a) v`, optionally without the diagonal.
    pub fn apply_add(&self, v: &[C64], out: &mut [C64], s: C64, skip_diagonal: bool) {
        let half = (self.nm / 2) as i64;
        for j in 0..self.nm {
            if v[j] == ZERO || !self.nonzero[j] {
                continue;
            }
            let m = j as i64 - half;
            let sv = s * v[j];
            for (k, &ak) in self.spectra[j].iter().enumerate() {
                if skip_diagonal && k == 0 {
                    continue;
                }
                let idx = m + freq(k, self.ny) + half;
                if idx >= 0 && (idx as usize) < self.nm {
                    out[idx as usize] += ak * sv;
                }
            }
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.nm];
        self.apply_add(v, &mut out, C64::new(1.0, 0.0), false);
        out
    }
}
