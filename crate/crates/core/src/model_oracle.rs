//! Reference solutions of `P0 u = 0`, `u|_{t=0} = f` on the half-cylinder.
//!
//! The separable case uses the exact Airy quotient per mode. The general case is
//! solved by spectral elements in `t` (Chebyshev-Lobatto nodes, `C^1` interfaces)
//! with per-mode band LU and GMRES over the mode coupling.

use crate::complex_airy::log_deriv_f;
use crate::error::{Error, Result};
use crate::glancing_parametrix::SpectralParams;
use crate::symbol_calculus::{GridSymbol, ModeFunction, ModeOperator};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const DECAY_TARGET: f64 = 1e-10;
const T_CAP: f64 = 2.0;

/// `D_t u|_{t=0} = -i h^{1/3} F((h m + i mu qbar) h^{-2/3})`.
pub fn exact_mode_dn(m: i64, p: &SpectralParams, qbar: f64) -> Result<C64> {
    if !(qbar > 0.0) {
        return Err(Error::InvalidParams(format!("qbar = {qbar} must be positive")));
    }
    let w = C64::new(p.h * m as f64, p.mu * qbar) * p.h.powf(-2.0 / 3.0);
    Ok(C64::new(0.0, -1.0) * p.h.powf(1.0 / 3.0) * log_deriv_f(w)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FarCondition {
    HardZero,
    /// `h u' = i sqrt(-(T + eta + i mu qbar)) u` on the decaying branch.
    DecayMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BvpConfig {
    /// Truncation height; `None` picks the smallest `T` with `e^{-T^{1/2}|mu|/4h} < 1e-10`, capped at 2.
    pub t_max: Option<f64>,
    /// Polynomial degree per element.
    pub degree: usize,
    /// Scales the base element width `min(h^{2/3}, 2 pi h / k_max)`.
    pub width_factor: f64,
    /// Extra modes kept on each side of the support of `f`.
    pub margin: usize,
    pub far_condition: FarCondition,
    pub gmres_tol: f64,
    pub gmres_restart: usize,
    pub max_iterations: usize,
}

impl Default for BvpConfig {
    fn default() -> Self {
        BvpConfig {
            t_max: None,
            degree: 16,
            width_factor: 1.0,
            margin: 48,
            far_condition: FarCondition::HardZero,
            gmres_tol: 1e-12,
            gmres_restart: 20,
            max_iterations: 400,
        }
    }
}

/// Default height and whether it meets the decay target.
pub fn default_height(p: &SpectralParams) -> (f64, bool) {
    let need = (4.0 * p.h * (1.0 / DECAY_TARGET).ln() / p.mu.abs()).powi(2);
    if need <= T_CAP {
        (need, true)
    } else {
        (T_CAP, false)
    }
}

/// Chebyshev-Lobatto nodes on `[-1, 1]` (ascending) and the differentiation matrix.
pub fn cheb(p: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let x: Vec<f64> = (0..=p).map(|j| -(PI * j as f64 / p as f64).cos()).collect();
    let c = |j: usize| if j == 0 || j == p { 2.0 } else { 1.0 };
    let sgn = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };
    let mut d = vec![vec![0.0; p + 1]; p + 1];
    for i in 0..=p {
        for j in 0..=p {
            if i != j {
                d[i][j] = c(i) / c(j) * sgn(i + j) / (x[i] - x[j]);
            }
        }
        d[i][i] = -(0..=p).filter(|&j| j != i).map(|j| d[i][j]).sum::<f64>();
    }
    (x, d)
}

/// Element layout in `t`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub degree: usize,
    pub edges: Vec<f64>,
    pub nodes: Vec<f64>,
    d: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
}

impl Mesh {
    pub fn new(degree: usize, edges: Vec<f64>) -> Self {
        let (x, d) = cheb(degree);
        let n = degree + 1;
        let mut d2 = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d2[i][j] = (0..n).map(|k| d[i][k] * d[k][j]).sum();
            }
        }
        let mut nodes = vec![edges[0]];
        for e in 0..edges.len() - 1 {
            let (a, b) = (edges[e], edges[e + 1]);
            for xi in x.iter().skip(1) {
                nodes.push(a + (xi + 1.0) * (b - a) / 2.0);
            }
        }
        Mesh { degree, edges, nodes, d, d2 }
    }

    /// Uniform elements of width `w0` up to `t1`, then geometric growth by 1.5 up to `t_max`.
    pub fn graded(degree: usize, w0: f64, t1: f64, t_max: f64) -> Self {
        let mut edges = vec![0.0];
        let mut w = w0;
        while *edges.last().unwrap() < t_max - 1e-14 {
            let last = *edges.last().unwrap();
            if last >= t1 {
                w *= 1.5;
            }
            edges.push((last + w).min(t_max));
        }
        Self::new(degree, edges)
    }

    pub fn elements(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes per `h^{2/3}` in the finest element.
    pub fn density(&self, h: f64) -> f64 {
        let wmin = self.edges.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        self.degree as f64 * h.powf(2.0 / 3.0) / wmin
    }

    fn is_collocation(&self, r: usize) -> bool {
        r > 0 && r + 1 < self.len() && r % self.degree != 0
    }
}

/// Band LU with partial pivoting; row `i` stores columns `i - kl .. i + kl + ku`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    rows: Vec<Vec<C64>>,
    lower: Vec<Vec<C64>>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        BandLu { n, kl, ku, rows: vec![vec![ZERO; w]; n], lower: vec![vec![ZERO; kl]; n], piv: (0..n).collect() }
    }

    fn slot(&self, i: usize, c: usize) -> Option<usize> {
        let s = c as i64 + self.kl as i64 - i as i64;
        if s >= 0 && (s as usize) < self.rows[0].len() {
            Some(s as usize)
        } else {
            None
        }
    }

    pub fn set(&mut self, i: usize, c: usize, v: C64) -> Result<()> {
        let s = self.slot(i, c).ok_or_else(|| Error::Singular(format!("entry ({i}, {c}) outside band")))?;
        self.rows[i][s] = v;
        Ok(())
    }

    pub fn add(&mut self, i: usize, c: usize, v: C64) -> Result<()> {
        let s = self.slot(i, c).ok_or_else(|| Error::Singular(format!("entry ({i}, {c}) outside band")))?;
        self.rows[i][s] += v;
        Ok(())
    }

    fn get(&self, i: usize, c: usize) -> C64 {
        self.slot(i, c).map(|s| self.rows[i][s]).unwrap_or(ZERO)
    }

    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let reach = self.kl + self.ku;
        for i in 0..n {
            let last = (i + self.kl).min(n - 1);
            let (mut p, mut best) = (i, self.get(i, i).norm());
            for r in i + 1..=last {
                let v = self.get(r, i).norm();
                if v > best {
                    p = r;
                    best = v;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(format!("zero pivot at row {i}")));
            }
            self.piv[i] = p;
            let cend = (i + reach).min(n - 1);
            if p != i {
                for c in i..=cend {
                    let (a, b) = (self.get(i, c), self.get(p, c));
                    if let Some(s) = self.slot(i, c) {
                        self.rows[i][s] = b;
                    }
                    if let Some(s) = self.slot(p, c) {
                        self.rows[p][s] = a;
                    }
                }
            }
            let piv = self.get(i, i);
            for r in i + 1..=last {
                let l = self.get(r, i) / piv;
                self.lower[i][r - i - 1] = l;
                if l == ZERO {
                    continue;
                }
                if let Some(s) = self.slot(r, i) {
                    self.rows[r][s] = ZERO;
                }
                for c in i + 1..=cend {
                    let u = self.get(i, c);
                    if u != ZERO {
                        let s = self.slot(r, c).expect("fill within band");
                        self.rows[r][s] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi != ZERO {
                for r in i + 1..=(i + self.kl).min(n - 1) {
                    b[r] -= self.lower[i][r - i - 1] * bi;
                }
            }
        }
        let reach = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..=(i + reach).min(n - 1) {
                s -= self.get(i, c) * b[c];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// One decoupled mode: `-h^2 u'' + (t + eta + c) u` with boundary rows.
fn mode_matrix(mesh: &Mesh, h: f64, eta: f64, c: C64, far: FarCondition, mu_q: C64) -> Result<BandLu> {
    let p = mesh.degree;
    let n = mesh.len();
    let mut a = BandLu::zeros(n, p, p);
    a.set(0, 0, C64::new(1.0, 0.0))?;
    for e in 0..mesh.elements() {
        let s = e * p;
        let w = mesh.edges[e + 1] - mesh.edges[e];
        let sc2 = (2.0 / w).powi(2);
        for i in 1..p {
            let r = s + i;
            let t = mesh.nodes[r];
            for j in 0..=p {
                a.add(r, s + j, C64::new(-h * h * sc2 * mesh.d2[i][j], 0.0))?;
            }
            a.add(r, r, C64::new(t + eta, 0.0) + c)?;
        }
        if e + 1 < mesh.elements() {
            let r = s + p;
            let wr = mesh.edges[e + 2] - mesh.edges[e + 1];
            for j in 0..=p {
                a.add(r, s + j, C64::new(mesh.d[p][j] * 2.0 / w, 0.0))?;
                a.add(r, s + p + j, C64::new(-mesh.d[0][j] * 2.0 / wr, 0.0))?;
            }
        }
    }
    let last = n - 1;
    match far {
        FarCondition::HardZero => a.set(last, last, C64::new(1.0, 0.0))?,
        FarCondition::DecayMatching => {
            let e = mesh.elements() - 1;
            let s = e * p;
            let w = mesh.edges[e + 1] - mesh.edges[e];
            for j in 0..=p {
                a.add(last, s + j, C64::new(h * mesh.d[p][j] * 2.0 / w, 0.0))?;
            }
            let tt = *mesh.nodes.last().unwrap();
            let root = -(C64::new(tt + eta, 0.0) + mu_q);
            let mut k = root.sqrt();
            if k.im < 0.0 {
                k = -k;
            }
            a.add(last, last, -C64::new(0.0, 1.0) * k)?;
        }
    }
    a.factor()?;
    Ok(a)
}

#[derive(Debug, Clone, Serialize)]
pub struct BvpReport {
    pub t_max: f64,
    pub nodes: usize,
    pub elements: usize,
    pub modes: usize,
    pub iterations: usize,
    pub relative_residual: f64,
    pub density: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub mesh: Mesh,
    /// Window of mode indices `[lo, hi)` in the caller's numbering.
    pub window: (usize, usize),
    /// `u[j][r]`: mode `lo + j` at node `r`.
    pub u: Vec<Vec<C64>>,
    pub dn: ModeFunction,
    pub report: BvpReport,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn nrm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES for `x + K x = b`; returns iterations and the final relative residual.
fn gmres(op: impl Fn(&[C64]) -> Vec<C64>, b: &[C64], x: &mut Vec<C64>, restart: usize, tol: f64, max_it: usize) -> (usize, f64) {
    let bn = nrm(b).max(1e-300);
    let mut its = 0;
    let apply = |v: &[C64]| -> Vec<C64> {
        let k = op(v);
        v.iter().zip(k).map(|(a, c)| a + c).collect()
    };
    loop {
        let ax = apply(x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = nrm(&r);
        if beta / bn <= tol || its >= max_it {
            return (its, beta / bn);
        }
        let mut v = vec![r.iter().map(|c| c / beta).collect::<Vec<_>>()];
        let mut hm = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![ZERO; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..restart {
            its += 1;
            let mut w = apply(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(vi, &w);
                hm[i][k] = hik;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hik * b);
            }
            let wn = nrm(&w);
            hm[k + 1][k] = C64::new(wn, 0.0);
            for i in 0..k {
                let t = cs[i].conj() * hm[i][k] + sn[i].conj() * hm[i + 1][k];
                hm[i + 1][k] = -sn[i] * hm[i][k] + cs[i] * hm[i + 1][k];
                hm[i][k] = t;
            }
            let (a, bb) = (hm[k][k], hm[k + 1][k]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            cs[k] = if den == 0.0 { C64::new(1.0, 0.0) } else { a / den };
            sn[k] = if den == 0.0 { ZERO } else { bb / den };
            hm[k][k] = cs[k].conj() * a + sn[k].conj() * bb;
            hm[k + 1][k] = ZERO;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            if g[k + 1].norm() / bn <= tol || wn == 0.0 || its >= max_it {
                break;
            }
            v.push(w.iter().map(|c| c / wn).collect());
        }
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hm[i][j] * y[j];
            }
            y[i] = s / hm[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&v[j]).for_each(|(a, b)| *a += yj * b);
        }
    }
}

fn window_of(f: &ModeFunction, margin: usize) -> Option<(usize, usize)> {
    let nz: Vec<usize> = (0..f.nm()).filter(|&j| f.coeffs[j] != ZERO).collect();
    let (&a, &b) = (nz.first()?, nz.last()?);
    Some((a.saturating_sub(margin), (b + 1 + margin).min(f.nm())))
}

pub fn solve_bvp(f: &ModeFunction, q: &GridSymbol, qtilde: &GridSymbol, p: &SpectralParams, cfg: &BvpConfig) -> Result<BvpSolution> {
    if q.nm != f.nm() || qtilde.nm != f.nm() || q.ny != qtilde.ny {
        return Err(Error::GridMismatch("q, qtilde and f windows differ".into()));
    }
    if !(p.mu != 0.0) {
        return Err(Error::InvalidParams("mu must be nonzero".into()));
    }
    let h = p.h;
    let (t_max, mut warning) = match cfg.t_max {
        Some(t) => (t, None),
        None => {
            let (t, ok) = default_height(p);
            (t, if ok { None } else { Some(format!("decay factor at T = {t} exceeds {DECAY_TARGET}")) })
        }
    };
    let Some((lo, hi)) = window_of(f, cfg.margin) else {
        let mesh = Mesh::graded(cfg.degree, t_max, t_max, t_max);
        let report = BvpReport { t_max, nodes: mesh.len(), elements: mesh.elements(), modes: 0, iterations: 0, relative_residual: 0.0, density: f64::INFINITY, warning };
        return Ok(BvpSolution { mesh, window: (0, 0), u: Vec::new(), dn: ModeFunction::zeros(h, f.nm()), report });
    };
    let nw = hi - lo;
    let etas: Vec<f64> = (lo..hi).map(|j| h * f.mode(j) as f64).collect();
    let qop = ModeOperator::new(q);
    let qtop = ModeOperator::new(qtilde);
    let qdiag = qop.diagonal();
    let qtdiag = qtop.diagonal();
    let qmax = q.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let eta_min = etas.iter().cloned().fold(f64::INFINITY, f64::min);
    let eta_abs = etas.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let kmax = (eta_abs + p.mu.abs() * qmax).sqrt().max(1e-12);
    let w0 = cfg.width_factor * h.powf(2.0 / 3.0).min(2.0 * PI * h / kmax);
    let t1 = ((-eta_min).max(0.0) + 20.0 * h.powf(2.0 / 3.0)).min(t_max);
    let mesh = Mesh::graded(cfg.degree, w0, t1, t_max);
    let density = mesh.density(h);
    if density < 8.0 {
        return Err(Error::Resolution(format!("{density:.2} nodes per h^(2/3)")));
    }
    let n = mesh.len();
    let shifts: Vec<(C64, C64)> = (lo..hi)
        .map(|j| {
            let mq = C64::new(0.0, p.mu) * qdiag[j];
            (mq + h * qtdiag[j], mq)
        })
        .collect();
    let lus: Vec<BandLu> = (0..nw)
        .into_par_iter()
        .map(|k| mode_matrix(&mesh, h, etas[k], shifts[k].0, cfg.far_condition, shifts[k].1))
        .collect::<Result<_>>()?;
    let coupled = {
        let mut probe = vec![ZERO; q.nm];
        probe[lo..hi].iter_mut().for_each(|v| *v = C64::new(1.0, 0.0));
        let mut out = vec![ZERO; q.nm];
        qop.apply_add(&probe, &mut out, C64::new(1.0, 0.0), true);
        qtop.apply_add(&probe, &mut out, C64::new(1.0, 0.0), true);
        out.iter().any(|v| *v != ZERO)
    };
    let inv = |rhs: &[C64]| -> Vec<C64> {
        let mut out = rhs.to_vec();
        out.par_chunks_mut(n).zip(lus.par_iter()).for_each(|(c, lu)| lu.solve(c));
        out
    };
    let coupling = |x: &[C64]| -> Vec<C64> {
        let mut out = vec![ZERO; nw * n];
        let cols: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|r| {
                if !mesh.is_collocation(r) {
                    return Vec::new();
                }
                let mut v = vec![ZERO; q.nm];
                for k in 0..nw {
                    v[lo + k] = x[k * n + r];
                }
                let mut o = vec![ZERO; q.nm];
                qop.apply_add(&v, &mut o, C64::new(0.0, p.mu), true);
                qtop.apply_add(&v, &mut o, C64::new(h, 0.0), true);
                o
            })
            .collect();
        for (r, o) in cols.iter().enumerate() {
            if o.is_empty() {
                continue;
            }
            for k in 0..nw {
                out[k * n + r] = o[lo + k];
            }
        }
        out
    };
    let mut b = vec![ZERO; nw * n];
    for k in 0..nw {
        b[k * n] = f.coeffs[lo + k];
    }
    let (u, iterations, relative_residual) = if coupled {
        let mut v = vec![ZERO; nw * n];
        let (its, res) = gmres(|x| coupling(&inv(x)), &b, &mut v, cfg.gmres_restart, cfg.gmres_tol, cfg.max_iterations);
        if !(res <= cfg.gmres_tol * 10.0) {
            return Err(Error::NoConvergence(format!("GMRES stopped at relative residual {res:.3e} after {its} iterations")));
        }
        (inv(&v), its, res)
    } else {
        (inv(&b), 0, 0.0)
    };
    if warning.is_none() && cfg.t_max.is_none() && t_max >= T_CAP {
        warning = Some("T capped".into());
    }
    let w = mesh.edges[1] - mesh.edges[0];
    let mut dn = ModeFunction::zeros(h, f.nm());
    let mut rows = Vec::with_capacity(nw);
    for k in 0..nw {
        let uk = &u[k * n..(k + 1) * n];
        let d0: C64 = (0..=mesh.degree).map(|j| uk[j] * mesh.d[0][j]).sum::<C64>() * (2.0 / w);
        dn.coeffs[lo + k] = C64::new(0.0, -h) * d0;
        rows.push(uk.to_vec());
    }
    let report = BvpReport { t_max, nodes: n, elements: mesh.elements(), modes: nw, iterations, relative_residual, density, warning };
    Ok(BvpSolution { mesh, window: (lo, hi), u: rows, dn, report })
}

pub fn dn_oracle(f: &ModeFunction, q: &GridSymbol, qtilde: &GridSymbol, p: &SpectralParams, cfg: &BvpConfig) -> Result<ModeFunction> {
    Ok(solve_bvp(f, q, qtilde, p, cfg)?.dn)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub h: f64,
    pub mu: f64,
    pub mode: i64,
    pub dn_exact: [f64; 2],
    pub dn_parametrix: [f64; 2],
    pub rel_err: f64,
}

impl OracleComparison {
    pub fn new(p: &SpectralParams, mode: i64, exact: C64, approx: C64) -> Self {
        OracleComparison {
            h: p.h,
            mu: p.mu,
            mode,
            dn_exact: [exact.re, exact.im],
            dn_parametrix: [approx.re, approx.im],
            rel_err: (approx - exact).norm() / exact.norm().max(1e-300),
        }
    }
}
