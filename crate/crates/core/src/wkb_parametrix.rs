//! WKB parametrix `u2 = Op_h(phi(t / (delta1 |rho|^2)) a e^{i phi / h}) f` away from glancing,
//! and its combination with the Airy parametrix.

use crate::error::{Error, Result};
use crate::glancing_parametrix::{
    apply_columns, apply_p0, assemble_u1_on, build_with_context, dn_g1_from, residual_norms, resolution_guard,
    t_grid_u1, AmplitudeSet, Context, Field, SpectralParams,
};
use crate::symbol_calculus::{CutoffSpec, GridSymbol, ModeFunction};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const RHO_FLOOR: f64 = 1e-10;
const BARRIER_SAMPLES: usize = 32;
const MAX_HALVINGS: usize = 30;

/// Which form of the eikonal and transport equations to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Fidelity {
    /// Eikonal mu-source weighted by `d_eta^alpha q`, transport with the `-i h phi_tt a` term.
    #[default]
    Consistent,
    /// Unweighted mu-source `-i mu sum (d_y phi)^alpha / alpha!` and no `phi_tt` term.
    AsWritten,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WkbOptions {
    pub delta1: f64,
    pub fidelity: Fidelity,
}

impl Default for WkbOptions {
    fn default() -> Self {
        WkbOptions { delta1: 0.1, fidelity: Fidelity::Consistent }
    }
}

/// Root of `rho^2 + eta + i mu q = 0` with `Im rho > 0`.
pub fn solve_branch_rho(p: &SpectralParams, q: &GridSymbol) -> Result<GridSymbol> {
    let mut out = q.clone();
    for i in 0..q.ny {
        for j in 0..q.nm {
            let idx = i * q.nm + j;
            out.values[idx] = branch_rho(q.eta(j), p.mu, q.values[idx].re)?;
        }
    }
    Ok(out)
}

pub fn branch_rho(eta: f64, mu: f64, q: f64) -> Result<C64> {
    if mu == 0.0 {
        return Err(Error::Region(format!("branch undefined for mu = 0 at eta = {eta}")));
    }
    let s = C64::new(-eta, -mu * q).sqrt();
    let r = if s.im < 0.0 { -s } else { s };
    if r.im > 0.0 {
        Ok(r)
    } else {
        Err(Error::Region(format!("no root with Im rho > 0 at eta = {eta}, mu = {mu}")))
    }
}

/// Grid-valued polynomial in `t`, index = power.
type TSeries = Vec<GridSymbol>;

fn zero_like(g: &GridSymbol) -> GridSymbol {
    g.map(|_| ZERO)
}

fn mul(a: &GridSymbol, b: &GridSymbol) -> GridSymbol {
    a.zip(b, |x, y| x * y).unwrap()
}

fn axpy(acc: &mut GridSymbol, s: C64, x: &GridSymbol) {
    acc.values.iter_mut().zip(&x.values).for_each(|(a, b)| *a += s * b);
}

/// Product of two `t` series truncated at degree `deg`.
fn tmul(a: &TSeries, b: &TSeries, deg: usize) -> TSeries {
    let mut out: TSeries = (0..=deg).map(|_| zero_like(&a[0])).collect();
    for (i, x) in a.iter().enumerate() {
        if x.max_abs() == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            if i + j > deg {
                break;
            }
            if y.max_abs() == 0.0 {
                continue;
            }
            let p = mul(x, y);
            axpy(&mut out[i + j], C64::new(1.0, 0.0), &p);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagnostics {
    /// Largest unsolved `t^K` coefficient (`K < M`) of the eikonal, relative.
    pub eikonal_residual: f64,
    /// `max |R_M(t)|` at `t = delta1 |rho|^2`.
    pub remainder_at_edge: f64,
    /// `max |phi_k| |rho|^{2k-3}` over `k >= 2`.
    pub phi_ratio: f64,
    /// `min |mu| sqrt(|mu| + |eta|) / h^{1-eps}` on the support.
    pub region_ratio: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone)]
pub struct PhaseExpansion {
    /// `phi[k]` is the coefficient of `t^k`; `phi[0] = 0`.
    pub phi: TSeries,
    pub rho: GridSymbol,
    pub delta1: f64,
    pub cols: Vec<usize>,
    pub diagnostics: PhaseDiagnostics,
}

/// `d_eta^alpha q` for `alpha = 0..=m`.
fn eta_derivatives(q: &GridSymbol, m: usize) -> Vec<GridSymbol> {
    let mut out = vec![q.clone()];
    for _ in 0..m {
        let next = out.last().unwrap().deta();
        out.push(next);
    }
    out
}

/// `i mu sum_{alpha=1}^{M} c_alpha (d_y phi)^alpha / alpha!` as a `t` series of degree `deg`.
fn mu_source(p: &SpectralParams, phi: &TSeries, dq: &[GridSymbol], fid: Fidelity, deg: usize) -> TSeries {
    let dphi: TSeries = phi.iter().map(|g| g.dy(1)).collect();
    let mut out: TSeries = (0..=deg).map(|_| zero_like(&phi[0])).collect();
    let mut pow = vec![phi[0].map(|_| C64::new(1.0, 0.0))];
    let mut fact = 1.0;
    for alpha in 1..=p.m {
        fact *= alpha as f64;
        pow = tmul(&pow, &dphi, deg);
        let weight = match fid {
            Fidelity::Consistent => Some(&dq[alpha]),
            Fidelity::AsWritten => None,
        };
        if let Some(w) = weight {
            if w.max_abs() == 0.0 {
                continue;
            }
        }
        for (k, term) in pow.iter().enumerate() {
            let t = match weight {
                Some(w) => mul(term, w),
                None => term.clone(),
            };
            axpy(&mut out[k], C64::new(0.0, p.mu / fact), &t);
        }
    }
    out
}

/// Left side of the eikonal `(phi_t)^2 + d_y phi + t - rho^2 + mu-source` through degree `deg`.
fn eikonal_lhs(p: &SpectralParams, phi: &TSeries, rho: &GridSymbol, dq: &[GridSymbol], fid: Fidelity, deg: usize) -> TSeries {
    let phit: TSeries = (0..phi.len().saturating_sub(1)).map(|l| phi[l + 1].map(|v| v * (l + 1) as f64)).collect();
    let mut out = tmul(&phit, &phit, deg);
    while out.len() <= deg {
        out.push(zero_like(rho));
    }
    for (k, g) in phi.iter().enumerate() {
        if k <= deg {
            axpy(&mut out[k], C64::new(1.0, 0.0), &g.dy(1));
        }
    }
    if deg >= 1 {
        out[1].values.iter_mut().for_each(|v| *v += 1.0);
    }
    let r2 = mul(rho, rho);
    axpy(&mut out[0], C64::new(-1.0, 0.0), &r2);
    let src = mu_source(p, phi, dq, fid, deg);
    for (k, s) in src.iter().enumerate() {
        axpy(&mut out[k], C64::new(1.0, 0.0), s);
    }
    out
}

fn active_of(cut: &GridSymbol) -> Vec<usize> {
    (0..cut.nm).filter(|&j| (0..cut.ny).any(|i| cut.get(i, j) != ZERO)).collect()
}

/// Order-by-order eikonal solve; `delta1` is halved until `Im phi >= t Im rho / 2` on `(0, delta1 |rho|^2]`.
pub fn solve_eikonal(p: &SpectralParams, q: &GridSymbol, cut: &GridSymbol, opts: &WkbOptions) -> Result<PhaseExpansion> {
    let rho = solve_branch_rho(p, q)?;
    let cols = active_of(cut);
    let mut region_ratio = f64::INFINITY;
    for &j in &cols {
        let eta = q.eta(j);
        region_ratio = region_ratio.min(p.mu.abs() * (p.mu.abs() + eta.abs()).sqrt() / p.h.powf(1.0 - p.eps));
        for i in 0..q.ny {
            if rho.get(i, j).norm() < RHO_FLOOR {
                return Err(Error::Region(format!("|rho| below floor at eta = {eta}")));
            }
        }
    }
    let dq = eta_derivatives(q, p.m);
    let m = p.m.max(1);
    let mut phi: TSeries = vec![zero_like(&rho), rho.clone()];
    for k in 1..m {
        let lhs = eikonal_lhs(p, &phi, &rho, &dq, opts.fidelity, k);
        let denom = rho.map(|r| r * (2.0 * (k + 1) as f64));
        let next = lhs[k].zip(&denom, |a, d| -a / d)?;
        phi.push(next);
    }
    let lhs = eikonal_lhs(p, &phi, &rho, &dq, opts.fidelity, 2 * m);
    let scale = phi.iter().map(|g| g.max_abs()).fold(1.0, f64::max).powi(2);
    let eikonal_residual = (0..m).map(|k| lhs[k].max_abs()).fold(0.0, f64::max) / scale;

    let mut delta1 = opts.delta1;
    let mut halvings = 0;
    while !barrier_holds(&phi, &rho, delta1, &cols) {
        delta1 *= 0.5;
        halvings += 1;
        if halvings > MAX_HALVINGS {
            return Err(Error::Region("imaginary-part barrier fails for every delta1".into()));
        }
    }
    let mut remainder_at_edge: f64 = 0.0;
    let mut phi_ratio: f64 = 0.0;
    for &j in &cols {
        for i in 0..q.ny {
            let idx = i * q.nm + j;
            let r = rho.values[idx];
            let t = delta1 * r.norm_sqr();
            let mut v = ZERO;
            for k in (m..lhs.len()).rev() {
                v = v * t + lhs[k].values[idx];
            }
            remainder_at_edge = remainder_at_edge.max((v * t.powi(m as i32)).norm());
            for (k, g) in phi.iter().enumerate().skip(2) {
                phi_ratio = phi_ratio.max(g.values[idx].norm() * r.norm().powi(2 * k as i32 - 3));
            }
        }
    }
    Ok(PhaseExpansion {
        phi,
        rho,
        delta1,
        cols,
        diagnostics: PhaseDiagnostics { eikonal_residual, remainder_at_edge, phi_ratio, region_ratio, halvings },
    })
}

fn eval_t(series: &[C64], t: f64) -> C64 {
    series.iter().rev().fold(ZERO, |acc, &c| acc * t + c)
}

fn barrier_holds(phi: &TSeries, rho: &GridSymbol, delta1: f64, cols: &[usize]) -> bool {
    let nm = rho.nm;
    cols.iter().all(|&j| {
        (0..rho.ny).all(|i| {
            let idx = i * nm + j;
            let r = rho.values[idx];
            let coeffs: Vec<C64> = phi.iter().map(|g| g.values[idx]).collect();
            (1..=BARRIER_SAMPLES).all(|s| {
                let t = delta1 * r.norm_sqr() * s as f64 / BARRIER_SAMPLES as f64;
                eval_t(&coeffs, t).im >= 0.5 * t * r.im
            })
        })
    })
}

/// Series `sum h^k t^nu c_{k,nu}` truncated at `k + nu <= cap`.
#[derive(Debug, Clone)]
pub struct BiSeries {
    pub terms: BTreeMap<(usize, usize), GridSymbol>,
    pub cap: usize,
    /// `(h, T)` used to weigh dropped terms by `h^k T^nu`.
    pub scales: (f64, f64),
    /// Sum of `h^k T^nu max |c|` over dropped terms.
    pub dropped: f64,
}

impl BiSeries {
    pub fn new(cap: usize, scales: (f64, f64)) -> Self {
        BiSeries { terms: BTreeMap::new(), cap, scales, dropped: 0.0 }
    }

    fn empty_like(&self) -> Self {
        Self::new(self.cap, self.scales)
    }

    pub fn add(&mut self, k: usize, nu: usize, s: C64, c: &GridSymbol) {
        if k + nu > self.cap {
            self.dropped += s.norm() * c.max_abs() * self.scales.0.powi(k as i32) * self.scales.1.powi(nu as i32);
            return;
        }
        match self.terms.get_mut(&(k, nu)) {
            Some(e) => axpy(e, s, c),
            None => {
                self.terms.insert((k, nu), c.map(|v| v * s));
            }
        }
    }

    pub fn get(&self, k: usize, nu: usize) -> Option<&GridSymbol> {
        self.terms.get(&(k, nu))
    }

    pub fn merge(&mut self, o: &BiSeries, s: C64) {
        for (&(k, nu), c) in &o.terms {
            self.add(k, nu, s, c);
        }
        self.dropped += o.dropped * s.norm();
    }

    /// Multiplication by a `t` series.
    pub fn times_t(&self, f: &TSeries) -> BiSeries {
        let mut out = self.empty_like();
        for (&(k, nu), c) in &self.terms {
            for (l, g) in f.iter().enumerate() {
                if g.max_abs() == 0.0 {
                    continue;
                }
                out.add(k, nu + l, C64::new(1.0, 0.0), &mul(c, g));
            }
        }
        out.dropped += self.dropped;
        out
    }

    pub fn times(&self, g: &GridSymbol) -> BiSeries {
        let mut out = self.empty_like();
        for (&(k, nu), c) in &self.terms {
            out.add(k, nu, C64::new(1.0, 0.0), &mul(c, g));
        }
        out.dropped = self.dropped * g.max_abs();
        out
    }

    /// `-i h d_y`.
    pub fn hdy(&self) -> BiSeries {
        let mut out = self.empty_like();
        for (&(k, nu), c) in &self.terms {
            out.add(k + 1, nu, C64::new(0.0, -1.0), &c.dy(1));
        }
        out.dropped = self.dropped;
        out
    }

    /// `e^{-i phi/h} (-i h d_y) e^{i phi/h}` applied once.
    pub fn conj_dy(&self, dyphi: &TSeries) -> BiSeries {
        let mut out = self.times_t(dyphi);
        out.merge(&self.hdy(), C64::new(1.0, 0.0));
        out
    }

    pub fn dt(&self) -> BiSeries {
        let mut out = self.empty_like();
        for (&(k, nu), c) in &self.terms {
            if nu > 0 {
                out.add(k, nu - 1, C64::new(nu as f64, 0.0), c);
            }
        }
        out.dropped = self.dropped;
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportDiagnostics {
    /// Largest unsolved `h^{k+1} t^nu` coefficient (`k + nu < M`), relative.
    pub transport_residual: f64,
    pub dropped: f64,
    /// `max |a_{k,nu}| |rho|^{3k + 2nu}`.
    pub amplitude_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct WkbAmplitudes {
    pub a: BTreeMap<(usize, usize), GridSymbol>,
    pub diagnostics: TransportDiagnostics,
}

impl WkbAmplitudes {
    pub fn get(&self, k: usize, nu: usize) -> Option<&GridSymbol> {
        self.a.get(&(k, nu))
    }
}

struct TransportOperator {
    p: SpectralParams,
    fid: Fidelity,
    phit: TSeries,
    phitt: TSeries,
    dyphi: TSeries,
    dq: Vec<GridSymbol>,
    dqt: Vec<GridSymbol>,
}

impl TransportOperator {
    fn new(p: SpectralParams, q: &GridSymbol, qtilde: &GridSymbol, phase: &PhaseExpansion, fid: Fidelity) -> Self {
        let phi = &phase.phi;
        let phit: TSeries = (0..phi.len() - 1).map(|l| phi[l + 1].map(|v| v * (l + 1) as f64)).collect();
        let phitt: TSeries = (0..phit.len().saturating_sub(1)).map(|l| phit[l + 1].map(|v| v * (l + 1) as f64)).collect();
        let dyphi = phi.iter().map(|g| g.dy(1)).collect();
        TransportOperator { p, fid, phit, phitt, dyphi, dq: eta_derivatives(q, p.m), dqt: eta_derivatives(qtilde, p.m) }
    }

    /// Conjugated operator minus the eikonal multiplier, `e^{-i phi/h} P0 e^{i phi/h} a - (eikonal) a`.
    fn apply(&self, a: &BiSeries) -> BiSeries {
        let one = C64::new(1.0, 0.0);
        let at = a.dt();
        let mut out = a.empty_like();
        let mut lead = at.times_t(&self.phit);
        lead.terms.iter_mut().for_each(|(_, c)| c.values.iter_mut().for_each(|v| *v *= C64::new(0.0, -2.0)));
        out.merge(&shift_h(&lead, 1), one);
        out.merge(&shift_h(&at.dt(), 2), C64::new(-1.0, 0.0));
        out.merge(&a.hdy(), one);
        if self.fid == Fidelity::Consistent && !self.phitt.is_empty() {
            out.merge(&shift_h(&a.times_t(&self.phitt), 1), C64::new(0.0, -1.0));
        }
        let need_q = (1..=self.p.m).any(|al| self.dq[al].max_abs() > 0.0);
        let need_qt = self.dqt.iter().any(|g| g.max_abs() > 0.0);
        if need_q || need_qt {
            let mut conj = a.clone();
            let mut plain = a.clone();
            let mut fact = 1.0;
            if need_qt && self.dqt[0].max_abs() > 0.0 {
                out.merge(&shift_h(&a.times(&self.dqt[0]), 1), one);
            }
            for alpha in 1..=self.p.m {
                fact *= alpha as f64;
                conj = conj.conj_dy(&self.dyphi);
                plain = plain.times_t(&self.dyphi);
                if self.dq[alpha].max_abs() > 0.0 {
                    let mut diff = conj.clone();
                    diff.merge(&plain, C64::new(-1.0, 0.0));
                    out.merge(&diff.times(&self.dq[alpha]), C64::new(0.0, self.p.mu / fact));
                }
                if self.dqt[alpha].max_abs() > 0.0 {
                    out.merge(&shift_h(&conj.times(&self.dqt[alpha]), 1), C64::new(1.0 / fact, 0.0));
                }
            }
        }
        out
    }
}

fn shift_h(s: &BiSeries, by: usize) -> BiSeries {
    let mut out = s.empty_like();
    for (&(k, nu), c) in &s.terms {
        out.add(k + by, nu, C64::new(1.0, 0.0), c);
    }
    out.dropped = s.dropped;
    out
}

/// Triangular transport solve with `a_{0,0} = cut`, `a_{k,0} = 0` for `k >= 1`.
pub fn solve_transport(
    p: &SpectralParams,
    q: &GridSymbol,
    qtilde: &GridSymbol,
    phase: &PhaseExpansion,
    cut: &GridSymbol,
    opts: &WkbOptions,
) -> Result<WkbAmplitudes> {
    let m = p.m;
    let op = TransportOperator::new(*p, q, qtilde, phase, opts.fidelity);
    let tscale = phase.cols.iter().flat_map(|&j| (0..phase.rho.ny).map(move |i| (i, j))).map(|(i, j)| phase.rho.get(i, j).norm_sqr()).fold(0.0, f64::max) * phase.delta1;
    let mut a = BiSeries::new(m + 1, (p.h, tscale));
    a.add(0, 0, C64::new(1.0, 0.0), cut);
    let rho = &phase.rho;
    for k in 0..m {
        for nu in 0..(m - k) {
            if a.get(k, nu + 1).is_some() {
                return Err(Error::NoConvergence(format!("induction order violated at ({k}, {})", nu + 1)));
            }
            let l = op.apply(&a);
            let x = l.get(k + 1, nu).cloned().unwrap_or_else(|| zero_like(cut));
            let denom = rho.map(|r| C64::new(0.0, 2.0 * (nu + 1) as f64) * r);
            let mut next = x.zip(&denom, |v, d| v / d)?;
            for (nv, cv) in next.values.iter_mut().zip(&cut.values) {
                if *cv == ZERO && nv.norm() < 1e-300 {
                    *nv = ZERO;
                }
            }
            a.add(k, nu + 1, C64::new(1.0, 0.0), &next);
        }
    }
    let l = op.apply(&a);
    let scale = a.terms.values().map(|g| g.max_abs()).fold(1e-300, f64::max);
    let mut transport_residual: f64 = 0.0;
    for (&(k, nu), c) in &l.terms {
        if k >= 1 && (k - 1) + nu < m {
            transport_residual = transport_residual.max(c.max_abs() / scale);
        }
    }
    let mut amplitude_ratio: f64 = 0.0;
    for (&(k, nu), g) in &a.terms {
        for &j in &phase.cols {
            for i in 0..g.ny {
                let idx = i * g.nm + j;
                amplitude_ratio = amplitude_ratio.max(g.values[idx].norm() * rho.values[idx].norm().powi((3 * k + 2 * nu) as i32));
            }
        }
    }
    Ok(WkbAmplitudes { a: a.terms, diagnostics: TransportDiagnostics { transport_residual, dropped: l.dropped, amplitude_ratio } })
}

/// Everything needed to evaluate `u2`.
pub struct WkbParametrix {
    pub params: SpectralParams,
    pub q: GridSymbol,
    pub qtilde: GridSymbol,
    pub cut: GridSymbol,
    pub phase: PhaseExpansion,
    pub amps: WkbAmplitudes,
    pub opts: WkbOptions,
}

/// `phi(eta / h^eps)` minus the glancing cutoff in Case 2.
pub fn phi2_cutoff(p: &SpectralParams, ny: usize, nm: usize) -> GridSymbol {
    let he = p.h.powf(p.eps);
    let s = p.glancing_scale();
    let case2 = p.case() == 2;
    GridSymbol::from_fn(p.h, ny, nm, |_, eta| {
        let outer = CutoffSpec::STANDARD.value(eta / he);
        let inner = if case2 { CutoffSpec::STANDARD.value(eta * s) } else { 0.0 };
        C64::new(outer - inner, 0.0)
    })
}

pub fn build_wkb(p: SpectralParams, q: &GridSymbol, qtilde: &GridSymbol, opts: WkbOptions) -> Result<WkbParametrix> {
    p.validate()?;
    let cut = phi2_cutoff(&p, q.ny, q.nm);
    let phase = solve_eikonal(&p, q, &cut, &opts)?;
    let amps = solve_transport(&p, q, qtilde, &phase, &cut, &opts)?;
    Ok(WkbParametrix { params: p, q: q.clone(), qtilde: qtilde.clone(), cut, phase, amps, opts })
}

impl WkbParametrix {
    /// `t` spacing `min(h^{2/3}, delta1 |rho|^2_min) / 8` and the support end `delta1 |rho|^2_max`.
    pub fn t_grid(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &j in &self.phase.cols {
            for i in 0..self.q.ny {
                let r2 = self.phase.rho.get(i, j).norm_sqr();
                lo = lo.min(r2);
                hi = hi.max(r2);
            }
        }
        let d = self.phase.delta1;
        ((self.params.h.powf(2.0 / 3.0)).min(d * lo) / 8.0, d * hi)
    }

    /// `A(t)` on the active columns.
    pub fn symbol_at(&self, t: f64) -> GridSymbol {
        let h = self.params.h;
        let nm = self.q.nm;
        let numax = self.amps.a.keys().map(|&(_, nu)| nu).max().unwrap_or(0);
        let pts: Vec<usize> = (0..self.q.ny).flat_map(|i| self.phase.cols.iter().map(move |&j| i * nm + j)).collect();
        let vals: Vec<C64> = pts
            .par_iter()
            .map(|&idx| {
                let r = self.phase.rho.values[idx];
                let edge = self.phase.delta1 * r.norm_sqr();
                let c = CutoffSpec::STANDARD.value(t / edge);
                if c == 0.0 {
                    return ZERO;
                }
                let phi: Vec<C64> = self.phase.phi.iter().map(|g| g.values[idx]).collect();
                let mut b = vec![ZERO; numax + 1];
                for (&(k, nu), g) in &self.amps.a {
                    b[nu] += g.values[idx] * h.powi(k as i32);
                }
                eval_t(&b, t) * (C64::new(0.0, 1.0) * eval_t(&phi, t) / h).exp() * c
            })
            .collect();
        let mut out = zero_like(&self.cut);
        for (idx, v) in pts.into_iter().zip(vals) {
            out.values[idx] = v;
        }
        out
    }

    pub fn assemble_on(&self, f: &ModeFunction, dt: f64, tmax: f64) -> Result<Field> {
        if f.nm() != self.q.nm {
            return Err(Error::GridMismatch(format!("f has {} modes, grid has {}", f.nm(), self.q.nm)));
        }
        let nt = (tmax / dt).ceil() as usize + 1;
        let mut field = Field::zeros(self.params.h, dt, nt, f.nm());
        for n in 0..nt {
            let a = self.symbol_at(n as f64 * dt);
            field.modes[n] = apply_columns(&a, &f.coeffs, &self.phase.cols);
        }
        Ok(field)
    }

    pub fn assemble_u2(&self, f: &ModeFunction) -> Result<Field> {
        let (dt, tmax) = self.t_grid();
        self.assemble_on(f, dt, tmax)
    }

    /// `rho a_{0,0} - i h sum_k h^k a_{k,1}`.
    pub fn dn_symbol(&self) -> GridSymbol {
        let h = self.params.h;
        let mut s = mul(&self.phase.rho, &self.cut);
        for (&(k, nu), g) in &self.amps.a {
            if nu == 1 {
                axpy(&mut s, C64::new(0.0, -h * h.powi(k as i32)), g);
            }
        }
        s
    }

    pub fn dn_g2(&self, f: &ModeFunction) -> Result<ModeFunction> {
        if f.nm() != self.q.nm {
            return Err(Error::GridMismatch("mode window mismatch".into()));
        }
        let v = apply_columns(&self.dn_symbol(), &f.coeffs, &self.phase.cols);
        Ok(ModeFunction { h: f.h, coeffs: v })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CombinedReport {
    pub h: f64,
    pub mu: f64,
    pub eps: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub case: u8,
    pub res_l2: f64,
    pub res_h1: f64,
    pub dn_norm: f64,
    /// `|u(0) - Op_h(phi(eta/h^eps)) f| / |f|`.
    pub boundary_error: f64,
    /// `|Op_h((1 - phi_1)(eta/h^eps)) N f| / |f|`.
    pub microsupport: f64,
    pub delta1: f64,
    pub phase: PhaseDiagnostics,
    pub transport: TransportDiagnostics,
}

pub struct Combined {
    pub field: Field,
    pub dn: ModeFunction,
    pub report: CombinedReport,
    pub glancing: Option<AmplitudeSet>,
    pub wkb: WkbParametrix,
}

/// Case 1: `u = u2`. Case 2: `u = u1 + u2` with the glancing cutoff removed from `phi_2`.
pub fn combine_parametrix(f: &ModeFunction, q: &GridSymbol, qtilde: &GridSymbol, p: SpectralParams, opts: WkbOptions) -> Result<Combined> {
    p.validate()?;
    let wkb = build_wkb(p, q, qtilde, opts)?;
    let (dt2, tmax2) = wkb.t_grid();
    let (dt1, _) = t_grid_u1(&p);
    let (mut field, mut dn, glancing, dt) = if p.case() == 2 {
        let ctx = Context::new(p, q, qtilde)?;
        let amps = build_with_context(ctx)?;
        let dt = dt1.min(dt2);
        let u1 = assemble_u1_on(f, &amps, dt)?;
        let dn1 = dn_g1_from(&u1.g, &amps)?;
        (u1.field, dn1, Some(amps), dt)
    } else {
        (Field::zeros(p.h, dt2, 1, f.nm()), ModeFunction::zeros(p.h, f.nm()), None, dt2)
    };
    let u2 = wkb.assemble_on(f, dt, tmax2)?;
    field.add(&u2)?;
    dn = dn.add(&wkb.dn_g2(f)?);
    resolution_guard(&p, dt)?;
    let r = apply_p0(&field, &p, q, qtilde)?;
    let (res_l2, res_h1) = residual_norms(&r);
    let nf = f.norm().max(1e-300);
    let he = p.h.powf(p.eps);
    let target = ModeFunction {
        h: f.h,
        coeffs: f.coeffs.iter().enumerate().map(|(j, &c)| c * CutoffSpec::STANDARD.value(p.h * f.mode(j) as f64 / he)).collect(),
    };
    let boundary_error = field.trace().sub(&target).norm() / nf;
    let outside = ModeFunction {
        h: f.h,
        coeffs: dn.coeffs.iter().enumerate().map(|(j, &c)| c * (1.0 - CutoffSpec::ENLARGED.value(p.h * dn.mode(j) as f64 / he))).collect(),
    };
    let report = CombinedReport {
        h: p.h,
        mu: p.mu,
        eps: p.eps,
        m: p.m,
        case: p.case(),
        res_l2: res_l2 / nf,
        res_h1: res_h1 / nf,
        dn_norm: dn.norm() / nf,
        boundary_error,
        microsupport: outside.norm() / nf,
        delta1: wkb.phase.delta1,
        phase: wkb.phase.diagnostics.clone(),
        transport: wkb.amps.diagnostics.clone(),
    };
    Ok(Combined { field, dn, report, glancing, wkb })
}

/// `N f` alone, without assembling the field.
pub fn combined_dn(f: &ModeFunction, q: &GridSymbol, qtilde: &GridSymbol, p: SpectralParams, opts: WkbOptions) -> Result<ModeFunction> {
    p.validate()?;
    let wkb = build_wkb(p, q, qtilde, opts)?;
    let mut dn = wkb.dn_g2(f)?;
    if p.case() == 2 {
        let amps = build_with_context(Context::new(p, q, qtilde)?)?;
        dn = dn.add(&crate::glancing_parametrix::dn_g1(f, &amps)?);
    }
    Ok(dn)
}
