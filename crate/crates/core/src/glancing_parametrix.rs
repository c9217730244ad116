//! Airy parametrix for the model operator
//! `P0 = D_t^2 + t + D_y + i mu q(y, D_y) + h qtilde(y, D_y)` on `t > 0`.
//!
//! Amplitudes are built in a formal algebra spanned by `Fs^p psi_k`, where
//! `psi_k = h^{k/3} Psi_k(t h^{-2/3}, (eta + i mu q) h^{-2/3})` and
//! `Fs = h^{1/3} F((eta + i mu q) h^{-2/3})`.

use crate::complex_airy::{airy_eval, AiryEval};
use crate::error::{Error, Result};
use crate::symbol_calculus::{fft_coeffs, freq, CutoffSpec, GridSymbol, ModeFunction, ModeOperator};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralParams {
    pub h: f64,
    pub mu: f64,
    pub eps: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl SpectralParams {
    pub fn new(h: f64, mu: f64, eps: f64, m: usize) -> Result<Self> {
        let p = SpectralParams { h, mu, eps, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let SpectralParams { h, mu, eps, .. } = *self;
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidParams(format!("h = {h} outside (0, 1)")));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidParams(format!("eps = {eps} outside (0, 1/2)")));
        }
        let lo = h.powf(1.0 - eps);
        let hi = h.powf(eps);
        if !(mu.abs() >= lo * (1.0 - 1e-12) && mu.abs() <= hi * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!("|mu| = {} outside [{lo}, {hi}]", mu.abs())));
        }
        Ok(())
    }

    pub fn rho1(&self, eta: f64) -> f64 {
        eta.abs().sqrt() + self.mu.abs().sqrt() + self.h / self.mu.abs()
    }

    pub fn rho2(&self, eta: f64) -> f64 {
        self.mu.abs() * self.rho1(eta) / self.h + (self.mu.abs() / self.h).sqrt()
    }

    pub fn in_g1(&self, eta: f64) -> bool {
        self.mu.abs() * (self.mu.abs() + eta.abs()) <= self.h.powf(1.0 + self.eps)
    }

    pub fn in_g2(&self, eta: f64) -> bool {
        let s = self.mu.abs() + eta.abs();
        s >= self.h.powf(1.0 + self.eps) / self.mu.abs() && s <= 2.0 * self.h.powf(self.eps)
    }

    /// `|eta| |mu| / h^{1+eps}`, the argument of the glancing cutoffs.
    pub fn glancing_scale(&self) -> f64 {
        self.mu.abs() / self.h.powf(1.0 + self.eps)
    }

    /// Case 1 when `|mu| >= h^{(1+eps)/2}`, where the glancing region is empty.
    pub fn case(&self) -> u8 {
        if self.mu.abs() >= self.h.powf(0.5 * (1.0 + self.eps)) {
            1
        } else {
            2
        }
    }
}

/// Shared grids for one parameter point.
#[derive(Debug)]
pub struct Context {
    pub params: SpectralParams,
    pub ny: usize,
    pub nm: usize,
    pub q: GridSymbol,
    pub qtilde: GridSymbol,
    /// `i mu d_y q / h`.
    pub gy: GridSymbol,
    /// `eta + i mu q`.
    pub wsharp: GridSymbol,
    pub fsharp: GridSymbol,
    pub base: Vec<AiryEval>,
    /// Columns where the amplitudes are supported.
    pub active: Vec<bool>,
}

impl Context {
    pub fn new(params: SpectralParams, q: &GridSymbol, qtilde: &GridSymbol) -> Result<Arc<Context>> {
        params.validate()?;
        if q.ny != qtilde.ny || q.nm != qtilde.nm {
            return Err(Error::GridMismatch("q and qtilde grids differ".into()));
        }
        if (q.h - params.h).abs() > 1e-15 * params.h {
            return Err(Error::GridMismatch("symbol grid h differs from params".into()));
        }
        let qmin = q.values.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
        let qim = q.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if qmin <= 0.0 || qim > 1e-12 {
            return Err(Error::InvalidParams(format!("q must be real and positive (min {qmin}, max |Im| {qim})")));
        }
        let (h, mu) = (params.h, params.mu);
        let hm23 = h.powf(-2.0 / 3.0);
        let gy = q.dy(1).map(|v| C64::new(0.0, mu / h) * C64::new(v.re, 0.0));
        let wsharp = q.zip(q, |v, _| v).unwrap();
        let mut wsharp = wsharp;
        for i in 0..q.ny {
            for j in 0..q.nm {
                let idx = i * q.nm + j;
                wsharp.values[idx] = C64::new(q.eta(j), mu * q.values[idx].re);
            }
        }
        let base: Vec<AiryEval> = wsharp.values.par_iter().map(|&w| airy_eval(w * hm23)).collect();
        let mut fsharp = wsharp.clone();
        for (f, b) in fsharp.values.iter_mut().zip(&base) {
            *f = b.log_deriv() * h.powf(1.0 / 3.0);
        }
        let a0 = a0_symbol(&params, q.ny, q.nm)?;
        let active = (0..q.nm).map(|j| a0.get(0, j) != ZERO).collect();
        Ok(Arc::new(Context { params, ny: q.ny, nm: q.nm, q: q.clone(), qtilde: qtilde.clone(), gy, wsharp, fsharp, base, active }))
    }

    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.nm).filter(|&j| self.active[j]).collect()
    }

    /// `psi_0..=psi_kmax` at grid point `idx`.
    pub fn psi_at(&self, idx: usize, t: f64, kmax: usize) -> Vec<C64> {
        let h = self.params.h;
        let s = t * h.powf(-2.0 / 3.0);
        let ez = &self.base[idx];
        let ew = if t == 0.0 { *ez } else { airy_eval(ez.z + s) };
        let scale = (ez.xi - ew.xi).exp() / ez.mantissa;
        let h13 = h.powf(1.0 / 3.0);
        let mut hk = 1.0;
        ew.mantissa_derivs(kmax)
            .into_iter()
            .map(|m| {
                let v = m * scale * hk;
                hk *= h13;
                v
            })
            .collect()
    }
}

/// `a_0 = phi_1(eta |mu| / h^{1+eps})`.
pub fn a0_symbol(p: &SpectralParams, ny: usize, nm: usize) -> Result<GridSymbol> {
    let s = p.glancing_scale();
    Ok(GridSymbol::from_fn(p.h, ny, nm, |_, eta| C64::new(CutoffSpec::ENLARGED.value(eta * s), 0.0)))
}

/// `sum c_{p,k} Fs^p psi_k` with coefficient grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FormalSum {
    pub terms: BTreeMap<(u32, u32), GridSymbol>,
}

impl FormalSum {
    pub fn new() -> Self {
        FormalSum { terms: BTreeMap::new() }
    }

    pub fn psi(k: u32, coeff: GridSymbol) -> Self {
        let mut s = Self::new();
        s.add_term(0, k, coeff);
        s
    }

    pub fn add_term(&mut self, p: u32, k: u32, c: GridSymbol) {
        match self.terms.get_mut(&(p, k)) {
            Some(e) => e.values.iter_mut().zip(&c.values).for_each(|(a, b)| *a += b),
            None => {
                self.terms.insert((p, k), c);
            }
        }
    }

    pub fn add(&mut self, o: &FormalSum) {
        for (&(p, k), c) in &o.terms {
            self.add_term(p, k, c.clone());
        }
    }

    pub fn scaled(&self, s: C64) -> FormalSum {
        FormalSum { terms: self.terms.iter().map(|(&key, c)| (key, c.map(|v| v * s))).collect() }
    }

    pub fn times(&self, g: &GridSymbol) -> FormalSum {
        FormalSum { terms: self.terms.iter().map(|(&key, c)| (key, c.zip(g, |a, b| a * b).unwrap())).collect() }
    }

    pub fn max_psi(&self) -> u32 {
        self.terms.keys().map(|&(_, k)| k).max().unwrap_or(0)
    }

    /// `sum_p c_{p,k} Fs^p` as a grid.
    pub fn psi_coefficient(&self, k: u32, fsharp: &GridSymbol) -> GridSymbol {
        let mut out = fsharp.map(|_| ZERO);
        for (&(p, kk), c) in &self.terms {
            if kk != k {
                continue;
            }
            for ((o, &cv), &f) in out.values.iter_mut().zip(&c.values).zip(&fsharp.values) {
                *o += cv * f.powu(p);
            }
        }
        out
    }

    /// Value at height `t` on the columns in `cols`; other columns are zero.
    pub fn eval(&self, ctx: &Context, t: f64, cols: &[usize]) -> GridSymbol {
        let kmax = self.max_psi() as usize;
        let mut out = ctx.fsharp.map(|_| ZERO);
        let nm = ctx.nm;
        let pts: Vec<usize> = (0..ctx.ny).flat_map(|i| cols.iter().map(move |&j| i * nm + j)).collect();
        let vals: Vec<C64> = pts
            .par_iter()
            .map(|&idx| {
                let psi = ctx.psi_at(idx, t, kmax);
                let f = ctx.fsharp.values[idx];
                self.terms.iter().map(|(&(p, k), c)| c.values[idx] * f.powu(p) * psi[k as usize]).sum()
            })
            .collect();
        for (idx, v) in pts.into_iter().zip(vals) {
            out.values[idx] = v;
        }
        out
    }
}

impl Default for FormalSum {
    fn default() -> Self {
        Self::new()
    }
}

/// Exact `d/dy` using `d_y psi_k = g (psi_{k+1} - Fs psi_k)` and
/// `d_y Fs = g (eta + i mu q - Fs^2)` with `g = i mu d_y q / h`.
pub fn formal_dy(s: &FormalSum, ctx: &Context) -> FormalSum {
    let mut out = FormalSum::new();
    for (&(p, k), c) in &s.terms {
        if c.max_abs() == 0.0 {
            continue;
        }
        out.add_term(p, k, c.dy(1));
        let cg = c.zip(&ctx.gy, |a, b| a * b).unwrap();
        if p > 0 {
            let pf = p as f64;
            out.add_term(p - 1, k, cg.zip(&ctx.wsharp, |a, w| a * w * pf).unwrap());
            out.add_term(p + 1, k, cg.map(|a| -a * pf));
        }
        out.add_term(p, k + 1, cg.clone());
        out.add_term(p + 1, k, cg.map(|a| -a));
    }
    out
}

/// `-i h d_y A + h E_1 + h E_2` for `A` given as a formal sum.
pub fn transport_operator(a: &FormalSum, ctx: &Context) -> FormalSum {
    let p = ctx.params;
    let (h, mu) = (p.h, p.mu);
    let mut dq = Vec::new();
    let mut dqt = Vec::new();
    let mut cq = ctx.q.clone();
    let mut cqt = ctx.qtilde.clone();
    for alpha in 0..=p.m {
        if alpha > 0 {
            cq = cq.deta();
            cqt = cqt.deta();
        }
        dq.push(cq.clone());
        dqt.push(cqt.clone());
    }
    let need = |alpha: usize| (alpha >= 1 && dq[alpha].max_abs() > 0.0) || dqt[alpha].max_abs() > 0.0;
    let top = (0..=p.m).filter(|&a| need(a)).max().unwrap_or(1).max(1);
    let mut ders = vec![a.clone()];
    for _ in 0..top {
        let next = formal_dy(ders.last().unwrap(), ctx);
        ders.push(next);
    }
    let mut out = ders[1].scaled(C64::new(0.0, -h));
    let mut coef = C64::new(1.0, 0.0);
    for alpha in 0..=p.m.min(top) {
        if alpha > 0 {
            coef *= C64::new(0.0, -h) / alpha as f64;
        }
        if alpha >= 1 && dq[alpha].max_abs() > 0.0 {
            out.add(&ders[alpha].times(&dq[alpha]).scaled(coef * C64::new(0.0, mu)));
        }
        if dqt[alpha].max_abs() > 0.0 {
            out.add(&ders[alpha].times(&dqt[alpha]).scaled(coef * h));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeDiagnostics {
    /// Largest `psi_k` coefficient (`k < M`) left in the full residual, relative to the amplitude scale.
    pub recursion_residual: f64,
    /// `max |d_y^alpha (a_k psi_k)|_{t=0} / (rho1 rho2)^k` over `k <= M`, `alpha <= 2`.
    pub weight_ratio: f64,
    /// `max |d_y^alpha a_k| / rho2^k`.
    pub amplitude_ratio: f64,
    /// `max rho1 rho2 / h^{eps/2}` over the amplitude support.
    pub expansion_ratio: f64,
}

pub struct AmplitudeSet {
    pub ctx: Arc<Context>,
    pub a: Vec<GridSymbol>,
    /// `B(t)` of the residual identity, as a formal sum.
    pub residual_sum: FormalSum,
    pub diagnostics: AmplitudeDiagnostics,
}

fn partial_sum(a: &[GridSymbol]) -> FormalSum {
    let mut s = FormalSum::new();
    for (k, ak) in a.iter().enumerate() {
        s.add_term(0, k as u32, ak.clone());
    }
    s
}

pub fn build_amplitudes(params: SpectralParams, q: &GridSymbol, qtilde: &GridSymbol) -> Result<AmplitudeSet> {
    if params.case() == 1 {
        return Err(Error::Region(format!("glancing region empty for |mu| = {} >= h^((1+eps)/2)", params.mu.abs())));
    }
    let ctx = Context::new(params, q, qtilde)?;
    build_with_context(ctx)
}

pub fn build_with_context(ctx: Arc<Context>) -> Result<AmplitudeSet> {
    let p = ctx.params;
    let h = p.h;
    let mut a = vec![a0_symbol(&p, ctx.ny, ctx.nm)?];
    for k in 0..=p.m {
        let r = transport_operator(&partial_sum(&a), &ctx);
        let s = r.psi_coefficient(k as u32, &ctx.fsharp);
        a.push(s.map(|v| v / (h * (k + 1) as f64)));
    }
    let body = partial_sum(&a[..=p.m]);
    let mut full = transport_operator(&body, &ctx);
    for k in 0..p.m {
        full.add_term(0, k as u32, a[k + 1].map(|v| v * (-h * (k + 1) as f64)));
    }
    let scale = (1..a.len()).map(|k| a[k].max_abs() * h * k as f64).fold(1e-300, f64::max);
    let mut recursion_residual: f64 = 0.0;
    for k in 0..p.m {
        recursion_residual = recursion_residual.max(full.psi_coefficient(k as u32, &ctx.fsharp).max_abs() / scale);
    }
    let mut set = AmplitudeSet {
        ctx: ctx.clone(),
        a,
        residual_sum: full,
        diagnostics: AmplitudeDiagnostics { recursion_residual, weight_ratio: 0.0, amplitude_ratio: 0.0, expansion_ratio: 0.0 },
    };
    set.diagnostics = set.measure()?;
    Ok(set)
}

impl AmplitudeSet {
    pub fn params(&self) -> SpectralParams {
        self.ctx.params
    }

    /// `A(t) = sum_{k <= M} a_k psi_k`.
    pub fn a_sum(&self) -> FormalSum {
        partial_sum(&self.a[..=self.params().m])
    }

    /// `h d_t A = sum_{k <= M} a_k psi_{k+1}`.
    pub fn dt_sum(&self) -> FormalSum {
        let mut s = FormalSum::new();
        for (k, ak) in self.a[..=self.params().m].iter().enumerate() {
            s.add_term(0, k as u32 + 1, ak.clone());
        }
        s
    }

    fn measure(&self) -> Result<AmplitudeDiagnostics> {
        let p = self.params();
        let ctx = &self.ctx;
        let cols = ctx.active_columns();
        let mut weight: f64 = 0.0;
        let mut amp: f64 = 0.0;
        let mut expansion: f64 = 0.0;
        for &j in &cols {
            let eta = ctx.q.eta(j);
            expansion = expansion.max(p.rho1(eta) * p.rho2(eta) / p.h.powf(p.eps / 2.0));
        }
        for k in 0..=p.m {
            let term = FormalSum::psi(k as u32, self.a[k].clone());
            let v0 = term.eval(ctx, 0.0, &cols);
            let mut dk = vec![v0];
            for _ in 0..2 {
                let next = dk.last().unwrap().dy(1);
                dk.push(next);
            }
            let mut da = vec![self.a[k].clone()];
            for _ in 0..2 {
                let next = da.last().unwrap().dy(1);
                da.push(next);
            }
            for &j in &cols {
                let eta = ctx.q.eta(j);
                let w = (p.rho1(eta) * p.rho2(eta)).powi(k as i32);
                let w2 = p.rho2(eta).powi(k as i32);
                for i in 0..ctx.ny {
                    for alpha in 0..=2 {
                        weight = weight.max(dk[alpha].get(i, j).norm() / w);
                        amp = amp.max(da[alpha].get(i, j).norm() / w2);
                    }
                }
            }
        }
        if !(weight.is_finite() && amp.is_finite() && expansion.is_finite()) {
            return Err(Error::NoConvergence("non-finite amplitude diagnostics".into()));
        }
        Ok(AmplitudeDiagnostics { recursion_residual: self.diagnostics.recursion_residual, weight_ratio: weight, amplitude_ratio: amp, expansion_ratio: expansion })
    }
}

/// Space-time field `u(t_n)` in mode form on a uniform `t` grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub h: f64,
    pub dt: f64,
    pub t: Vec<f64>,
    pub modes: Vec<Vec<C64>>,
}

impl Field {
    pub fn zeros(h: f64, dt: f64, nt: usize, nm: usize) -> Self {
        Field { h, dt, t: (0..nt).map(|n| n as f64 * dt).collect(), modes: vec![vec![ZERO; nm]; nt] }
    }

    pub fn nm(&self) -> usize {
        self.modes.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn trace(&self) -> ModeFunction {
        ModeFunction { h: self.h, coeffs: self.modes[0].clone() }
    }

    pub fn add(&mut self, o: &Field) -> Result<()> {
        if (self.dt - o.dt).abs() > 1e-15 * self.dt || self.nm() != o.nm() {
            return Err(Error::GridMismatch("fields on different grids".into()));
        }
        let n = self.t.len().max(o.t.len());
        while self.t.len() < n {
            self.t.push(self.t.len() as f64 * self.dt);
            self.modes.push(vec![ZERO; self.nm()]);
        }
        for (a, b) in self.modes.iter_mut().zip(&o.modes) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// `L^2(dt) x l^2(modes)` norm by the trapezoidal rule.
    pub fn l2(&self) -> f64 {
        let n = self.t.len();
        let mut s = 0.0;
        for (k, row) in self.modes.iter().enumerate() {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            s += w * row.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        (s * self.dt).sqrt()
    }

    /// CSV with columns `t, y, re, im`, sampling `ny` points per slice.
    pub fn write_csv<W: Write>(&self, mut w: W, ny: usize) -> std::io::Result<()> {
        writeln!(w, "t,y,re,im")?;
        let ys = crate::symbol_calculus::y_grid(ny);
        for (t, row) in self.t.iter().zip(&self.modes) {
            let f = ModeFunction { h: self.h, coeffs: row.clone() };
            for (y, v) in ys.iter().zip(f.to_grid(ny)) {
                writeln!(w, "{t},{y},{},{}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// `Op_h(a) g` restricted to the columns in `cols`.
pub fn apply_columns(a: &GridSymbol, g: &[C64], cols: &[usize]) -> Vec<C64> {
    let nm = a.nm;
    let half = (nm / 2) as i64;
    let mut out = vec![ZERO; nm];
    for &j in cols {
        if g[j] == ZERO {
            continue;
        }
        let spec = fft_coeffs(&a.column(j));
        let m = a.mode(j);
        for (k, &ak) in spec.iter().enumerate() {
            let idx = m + freq(k, a.ny) + half;
            if idx >= 0 && (idx as usize) < nm {
                out[idx as usize] += ak * g[j];
            }
        }
    }
    out
}

fn column_block(a: &GridSymbol, cols: &[usize]) -> DMatrix<C64> {
    let nm = a.nm;
    let half = (nm / 2) as i64;
    let mut mat = DMatrix::from_element(nm, cols.len(), ZERO);
    for (c, &j) in cols.iter().enumerate() {
        let spec = fft_coeffs(&a.column(j));
        let m = a.mode(j);
        for (k, &ak) in spec.iter().enumerate() {
            let idx = m + freq(k, a.ny) + half;
            if idx >= 0 && (idx as usize) < nm {
                mat[(idx as usize, c)] += ak;
            }
        }
    }
    mat
}

#[derive(Debug, Clone)]
pub struct U1Field {
    pub field: Field,
    pub g: ModeFunction,
    pub target: ModeFunction,
    pub z_norm: f64,
}

/// `t` spacing `h^{2/3}/8` on `[0, h^eps]`.
pub fn t_grid_u1(p: &SpectralParams) -> (f64, usize) {
    let dt = p.h.powf(2.0 / 3.0) / 8.0;
    let tmax = p.h.powf(p.eps);
    (dt, (tmax / dt).ceil() as usize + 1)
}

/// `Op_h(phi(eta |mu| / h^{1+eps})) f`.
pub fn glancing_target(p: &SpectralParams, f: &ModeFunction) -> ModeFunction {
    let s = p.glancing_scale();
    let coeffs = f.coeffs.iter().enumerate().map(|(j, &c)| c * CutoffSpec::STANDARD.value(p.h * f.mode(j) as f64 * s)).collect();
    ModeFunction { h: f.h, coeffs }
}

/// Solves `(I + Z) g = target` with `Z = Op_h(A(0) - a_0)` supported on the active columns.
pub fn boundary_solve(amps: &AmplitudeSet, target: &ModeFunction) -> Result<(ModeFunction, f64)> {
    let ctx = &amps.ctx;
    let cols = ctx.active_columns();
    let a_at0 = amps.a_sum().eval(ctx, 0.0, &cols);
    let zsym = a_at0.zip(&amps.a[0], |x, y| x - y)?;
    let zb = column_block(&zsym, &cols);
    let n = cols.len();
    let mut zss = DMatrix::from_element(n, n, ZERO);
    for (r, &i) in cols.iter().enumerate() {
        for c in 0..n {
            zss[(r, c)] = zb[(i, c)];
        }
    }
    let z_norm = crate::symbol_calculus::op_norm(&zss);
    let mut lhs = zss.clone();
    for d in 0..n {
        lhs[(d, d)] += C64::new(1.0, 0.0);
    }
    let rhs = DVector::from_iterator(n, cols.iter().map(|&j| target.coeffs[j]));
    let gs = lhs.lu().solve(&rhs).ok_or_else(|| Error::Singular(format!("I + Z not invertible, |Z| = {z_norm}")))?;
    let zg = &zb * &gs;
    let mut g = target.coeffs.clone();
    for (r, v) in g.iter_mut().enumerate() {
        *v -= zg[r];
    }
    for (c, &j) in cols.iter().enumerate() {
        g[j] = gs[c];
    }
    Ok((ModeFunction { h: target.h, coeffs: g }, z_norm))
}

pub fn assemble_u1(f: &ModeFunction, amps: &AmplitudeSet) -> Result<U1Field> {
    let (dt, _) = t_grid_u1(&amps.params());
    assemble_u1_on(f, amps, dt)
}

/// As [`assemble_u1`] on a caller-chosen `t` spacing.
pub fn assemble_u1_on(f: &ModeFunction, amps: &AmplitudeSet, dt: f64) -> Result<U1Field> {
    let p = amps.params();
    let ctx = &amps.ctx;
    if f.nm() != ctx.nm {
        return Err(Error::GridMismatch(format!("f has {} modes, grid has {}", f.nm(), ctx.nm)));
    }
    let target = glancing_target(&p, f);
    let (g, z_norm) = boundary_solve(amps, &target)?;
    let nt = (p.h.powf(p.eps) / dt).ceil() as usize + 1;
    let cols = ctx.active_columns();
    let asum = amps.a_sum();
    let he = p.h.powf(p.eps);
    let mut field = Field::zeros(p.h, dt, nt, ctx.nm);
    for n in 0..nt {
        let t = n as f64 * dt;
        let cut = CutoffSpec::STANDARD.value(t / he);
        if cut == 0.0 {
            continue;
        }
        let at = asum.eval(ctx, t, &cols);
        let v = apply_columns(&at, &g.coeffs, &cols);
        field.modes[n] = v.into_iter().map(|x| x * cut).collect();
    }
    Ok(U1Field { field, g, target, z_norm })
}

/// `D_t u|_{t=0} = -i Op_h(sum a_k psi_{k+1}|_0) g`.
pub fn dn_g1(f: &ModeFunction, amps: &AmplitudeSet) -> Result<ModeFunction> {
    let target = glancing_target(&amps.params(), f);
    let (g, _) = boundary_solve(amps, &target)?;
    dn_g1_from(&g, amps)
}

pub fn dn_g1_from(g: &ModeFunction, amps: &AmplitudeSet) -> Result<ModeFunction> {
    let ctx = &amps.ctx;
    let cols = ctx.active_columns();
    let sym = amps.dt_sum().eval(ctx, 0.0, &cols);
    let v = apply_columns(&sym, &g.coeffs, &cols);
    Ok(ModeFunction { h: g.h, coeffs: v.into_iter().map(|x| x * C64::new(0.0, -1.0)).collect() })
}

/// Second `t` derivative, fourth order, with one-sided stencils at `t = 0` and zero extension past the end.
fn d2t(rows: &[Vec<C64>], dt: f64) -> Vec<Vec<C64>> {
    let n = rows.len();
    let nm = rows[0].len();
    let get = |k: usize, j: usize| if k < n { rows[k][j] } else { ZERO };
    let mut out = vec![vec![ZERO; nm]; n];
    let s = 1.0 / (12.0 * dt * dt);
    for k in 0..n {
        for j in 0..nm {
            out[k][j] = s * if k == 0 {
                get(0, j) * 45.0 - get(1, j) * 154.0 + get(2, j) * 214.0 - get(3, j) * 156.0 + get(4, j) * 61.0 - get(5, j) * 10.0
            } else if k == 1 {
                get(0, j) * 10.0 - get(1, j) * 15.0 - get(2, j) * 4.0 + get(3, j) * 14.0 - get(4, j) * 6.0 + get(5, j)
            } else {
                -get(k - 2, j) + get(k - 1, j) * 16.0 - get(k, j) * 30.0 + get(k + 1, j) * 16.0 - get(k + 2, j)
            };
        }
    }
    out
}

fn d1t(rows: &[Vec<C64>], dt: f64) -> Vec<Vec<C64>> {
    let n = rows.len();
    let nm = rows[0].len();
    let get = |k: usize, j: usize| if k < n { rows[k][j] } else { ZERO };
    let mut out = vec![vec![ZERO; nm]; n];
    let s = 1.0 / (12.0 * dt);
    for k in 0..n {
        for j in 0..nm {
            out[k][j] = s * if k == 0 {
                -get(0, j) * 25.0 + get(1, j) * 48.0 - get(2, j) * 36.0 + get(3, j) * 16.0 - get(4, j) * 3.0
            } else if k == 1 {
                -get(0, j) * 3.0 - get(1, j) * 10.0 + get(2, j) * 18.0 - get(3, j) * 6.0 + get(4, j)
            } else {
                get(k - 2, j) - get(k - 1, j) * 8.0 + get(k + 1, j) * 8.0 - get(k + 2, j)
            };
        }
    }
    out
}

/// `P0 u` applied on the grid: fourth-order `t` differences, exact tangential action.
pub fn apply_p0(u: &Field, p: &SpectralParams, q: &GridSymbol, qtilde: &GridSymbol) -> Result<Field> {
    let h = p.h;
    let nm = u.nm();
    if q.nm != nm {
        return Err(Error::GridMismatch("q window differs from field".into()));
    }
    let mut rows = u.modes.clone();
    rows.push(vec![ZERO; nm]);
    rows.push(vec![ZERO; nm]);
    let utt = d2t(&rows, u.dt);
    let qop = ModeOperator::new(q);
    let qtop = ModeOperator::new(qtilde);
    let half = (nm / 2) as i64;
    let mut out = Field::zeros(h, u.dt, rows.len(), nm);
    out.modes.par_iter_mut().enumerate().for_each(|(n, o)| {
        let t = n as f64 * u.dt;
        let row = &rows[n];
        qop.apply_add(row, o, C64::new(0.0, p.mu), false);
        if !qtop.is_zero() {
            qtop.apply_add(row, o, C64::new(h, 0.0), false);
        }
        for j in 0..nm {
            let m = (j as i64 - half) as f64;
            o[j] += -h * h * utt[n][j] + (t + h * m) * row[j];
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub h: f64,
    pub mu: f64,
    pub eps: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub res_l2: f64,
    pub res_h1: f64,
    pub dn_norm: f64,
}

/// Semiclassical `L^2` and `H^1` norms of a residual field.
pub fn residual_norms(r: &Field) -> (f64, f64) {
    let h = r.h;
    let l2 = r.l2();
    let dt = d1t(&r.modes, r.dt);
    let dtf = Field { modes: dt.into_iter().map(|row| row.into_iter().map(|v| v * h).collect()).collect(), ..r.clone() };
    let nm = r.nm();
    let dyf = Field {
        modes: r.modes.iter().map(|row| row.iter().enumerate().map(|(j, v)| v * (h * (j as i64 - (nm / 2) as i64) as f64)).collect()).collect(),
        ..r.clone()
    };
    let h1 = (l2 * l2 + dtf.l2().powi(2) + dyf.l2().powi(2)).sqrt();
    (l2, h1)
}

/// Grid-resolution guard: at least 8 points per `h^{2/3}`.
pub fn resolution_guard(p: &SpectralParams, dt: f64) -> Result<()> {
    if dt > p.h.powf(2.0 / 3.0) / 8.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!("dt = {dt} coarser than h^(2/3)/8")));
    }
    Ok(())
}

pub fn residual_g1(u: &U1Field, amps: &AmplitudeSet, dn_norm: f64) -> Result<ResidualReport> {
    let p = amps.params();
    resolution_guard(&p, u.field.dt)?;
    let r = apply_p0(&u.field, &p, &amps.ctx.q, &amps.ctx.qtilde)?;
    let (l2, h1) = residual_norms(&r);
    Ok(ResidualReport { h: p.h, mu: p.mu, eps: p.eps, m: p.m, res_l2: l2, res_h1: h1, dn_norm })
}
