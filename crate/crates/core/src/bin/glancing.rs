use clap::{Args, Parser, Subcommand, ValueEnum};
use glancing::complex_airy::{airy_eval, selftest, AiryKernel};
use glancing::config::{QProfile, RunConfig, Scenario};
use glancing::disk_spectra::{self as ds, DiskConfig, FindOptions, Rect, RegionOptions};
use glancing::error::Error;
use glancing::glancing_parametrix::{assemble_u1, build_amplitudes, dn_g1, residual_g1, residual_norms, apply_p0};
use glancing::model_oracle::{exact_mode_dn, solve_bvp, BvpConfig};
use glancing::symbol_calculus::{composition_remainder, CutoffSpec, GridSymbol};
use glancing::wkb_parametrix::{build_wkb, combine_parametrix, combined_dn, Fidelity, WkbOptions};
use glancing::C64;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "glancing", version, about = "Glancing-region parametrices, model oracle and disk spectra")]
struct Cli {
    /// Flat key = value file; command-line flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    group: Group,
}

#[derive(Subcommand)]
enum Group {
    /// Complex Airy engine.
    #[command(subcommand)]
    Airy(AiryCmd),
    /// Semiclassical symbol calculus.
    #[command(subcommand)]
    Psdo(PsdoCmd),
    /// Model-problem parametrices.
    #[command(subcommand)]
    Parametrix(ParametrixCmd),
    /// Reference boundary value solver.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Transmission eigenvalues of the disk.
    #[command(subcommand)]
    Te(TeCmd),
}

#[derive(Subcommand)]
enum AiryCmd {
    /// Invariant suite on a grid covering |z| <= 20.
    Selftest {
        #[arg(long, value_enum)]
        grid: Option<GridDensity>,
        /// Replace the normalization constant (fault injection).
        #[arg(long)]
        b0: Option<f64>,
    },
    /// Factored Ai, Ai' and Ai'/Ai at one point.
    Eval {
        /// `re,im`
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GridDensity {
    Coarse,
    Dense,
}

#[derive(Subcommand)]
enum PsdoCmd {
    /// Composition remainder against h.
    Check(ModelArgs),
}

#[derive(Subcommand)]
enum ParametrixCmd {
    /// Airy-type parametrix near glancing.
    G1(ModelArgs),
    /// WKB parametrix away from glancing.
    G2(ModelArgs),
    /// Sum of both; residual rates over h.
    Combined(ModelArgs),
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Compare the combined DN map with the solver on random data.
    Bvp(ModelArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Comma-separated list.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    /// `mu = h^mu_exp` when `--mu` is absent.
    #[arg(long)]
    mu_exp: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "M")]
    m: Option<usize>,
    /// `const`, `const:<v>`, `sin`, `sin:<amp>`.
    #[arg(long)]
    q: Option<String>,
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    /// Random data sets (oracle).
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    Consistent,
    AsWritten,
}

#[derive(Subcommand)]
enum TeCmd {
    /// Roots of mode `m` in a rectangle.
    Find(TeArgs),
    /// Counting function N(r) up to rmax.
    Count(TeArgs),
    /// Counting function against the Weyl prediction.
    Weyl(TeArgs),
    /// Winding over the eigenvalue-free region.
    Region(TeArgs),
    /// Glancing-band DN multipliers over h.
    DnScan(TeArgs),
    /// Per-mode invertibility of the boundary symbol.
    TSymbol(TeArgs),
}

#[derive(Args, Clone)]
struct TeArgs {
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    n1: Option<f64>,
    #[arg(long)]
    n2: Option<f64>,
    /// `re0,re1,im0,im1`
    #[arg(long, allow_hyphen_values = true)]
    rect: Option<String>,
    #[arg(long)]
    m: Option<i64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "C")]
    c_eps: Option<f64>,
    #[arg(long)]
    strips: Option<usize>,
    /// Also scan `Re lambda <= -left_c`.
    #[arg(long)]
    left_c: Option<f64>,
    /// Comma-separated list.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    mu_exp: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
}

enum Failure {
    Config(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_) | Error::Region(_) | Error::Envelope(_) => Failure::Config(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<bool, Failure>;

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    name: String,
}

impl Ctx {
    fn emit(&self, report: &Value, csv: Option<(&str, Vec<u8>)>) -> std::result::Result<(), Failure> {
        let digest = self.cfg.digest();
        let mut full = json!({ "command": self.name, "config": self.cfg.entries(), "digest": digest });
        full["report"] = report.clone();
        println!("{}", serde_json::to_string_pretty(&full).unwrap());
        if let Some(dir) = &self.out {
            let io = |e: std::io::Error| Failure::Config(format!("{}: {e}", dir.display()));
            std::fs::create_dir_all(dir).map_err(io)?;
            let stem = self.name.replace(' ', "_");
            std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&full).unwrap()).map_err(io)?;
            if let Some((suffix, body)) = csv {
                let mut data = format!("# digest={digest}\n").into_bytes();
                data.extend(body);
                std::fs::write(dir.join(format!("{stem}_{suffix}.csv")), data).map_err(io)?;
            }
        }
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}

fn model_keys(a: &ModelArgs, cfg: &mut RunConfig) {
    if let Some(v) = &a.h {
        cfg.set("h", v);
    }
    if let Some(v) = a.mu {
        cfg.set("mu", v);
    }
    if let Some(v) = a.mu_exp {
        cfg.set("mu_exp", v);
    }
    if let Some(v) = a.eps {
        cfg.set("eps", v);
    }
    if let Some(v) = a.m {
        cfg.set("M", v);
    }
    if let Some(v) = &a.q {
        cfg.set("q", v);
    }
    if let Some(v) = a.fidelity {
        cfg.set("fidelity", if matches!(v, FidelityArg::Consistent) { "consistent" } else { "as-written" });
    }
    if let Some(v) = a.samples {
        cfg.set("samples", v);
    }
}

const MODEL_KEYS: [&str; 9] = ["h", "mu", "mu_exp", "eps", "M", "q", "fidelity", "samples", "seed"];

struct Model {
    hs: Vec<f64>,
    eps: f64,
    m: usize,
    q: QProfile,
    opts: WkbOptions,
    samples: usize,
    seed: u64,
}

impl Model {
    fn read(cfg: &RunConfig, default_h: &[f64]) -> std::result::Result<Self, Failure> {
        cfg.check_known(&MODEL_KEYS)?;
        let hs = cfg.get_list("h")?.unwrap_or_else(|| default_h.to_vec());
        let fidelity = match cfg.get_str("fidelity").unwrap_or("consistent") {
            "consistent" => Fidelity::Consistent,
            "as-written" => Fidelity::AsWritten,
            other => return Err(Failure::Config(format!("unknown fidelity {other}"))),
        };
        Ok(Model {
            hs,
            eps: cfg.get_or("eps", 0.2)?,
            m: cfg.get_or("M", 4)?,
            q: cfg.get_str("q").unwrap_or("sin").parse()?,
            opts: WkbOptions { fidelity, ..Default::default() },
            samples: cfg.get_or("samples", 5)?,
            seed: cfg.get_or("seed", 7)?,
        })
    }

    fn mu(cfg: &RunConfig, h: f64) -> std::result::Result<f64, Failure> {
        match cfg.get::<f64>("mu")? {
            Some(mu) => Ok(mu),
            None => Ok(h.powf(cfg.get_or("mu_exp", 0.8)?)),
        }
    }

    fn scenarios(&self, cfg: &RunConfig) -> std::result::Result<Vec<Scenario>, Failure> {
        self.hs.iter().map(|&h| Ok(Scenario::new(h, Self::mu(cfg, h)?, self.eps, self.m, self.q)?)).collect()
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

fn airy(cmd: &AiryCmd, ctx: &mut Ctx) -> Outcome {
    match cmd {
        AiryCmd::Selftest { grid, b0 } => {
            if let Some(g) = grid {
                ctx.cfg.set("grid", if matches!(g, GridDensity::Dense) { "dense" } else { "coarse" });
            }
            if let Some(b) = b0 {
                ctx.cfg.set("b0", b);
            }
            ctx.cfg.check_known(&["grid", "b0", "seed"])?;
            let n = match ctx.cfg.get_str("grid").unwrap_or("coarse") {
                "coarse" => 120,
                "dense" => 240,
                other => return Err(Failure::Config(format!("unknown grid {other}"))),
            };
            let kernel = match ctx.cfg.get::<f64>("b0")? {
                Some(b) => AiryKernel::with_b0(b),
                None => AiryKernel::standard().clone(),
            };
            let rep = selftest::run(&kernel, n);
            ctx.emit(&to_value(&rep), None)?;
            Ok(rep.passed)
        }
        AiryCmd::Eval { z } => {
            if let Some(z) = z {
                ctx.cfg.set("z", z);
            }
            ctx.cfg.check_known(&["z", "seed"])?;
            let v: Vec<f64> = ctx.cfg.get_list("z")?.ok_or_else(|| Failure::Config("missing z = re,im".into()))?;
            if v.len() != 2 {
                return Err(Failure::Config("z needs two components".into()));
            }
            let z = C64::new(v[0], v[1]);
            let e = airy_eval(z);
            let c = |w: C64| [w.re, w.im];
            let rep = json!({
                "z": c(z), "xi": c(e.xi), "mantissa": c(e.mantissa),
                "ai": c(e.ai()), "ai_deriv": c(e.ai_deriv()), "log_deriv": c(e.log_deriv()),
            });
            ctx.emit(&rep, None)?;
            Ok(true)
        }
    }
}

fn psdo(cmd: &PsdoCmd, ctx: &mut Ctx) -> Outcome {
    let PsdoCmd::Check(a) = cmd;
    model_keys(a, &mut ctx.cfg);
    ctx.cfg.check_known(&["h", "M", "seed"])?;
    let hs: Vec<f64> = ctx.cfg.get_list("h")?.unwrap_or_else(|| vec![0.1, 10f64.powf(-1.5), 0.01]);
    let m: usize = ctx.cfg.get_or("M", 2)?;
    let mut rows = Vec::new();
    let mut csv = b"h,remainder\n".to_vec();
    for &h in &hs {
        if !(h > 0.0 && h < 1.0) {
            return Err(Failure::Config(format!("h = {h} outside (0, 1)")));
        }
        let nm = (2 * (2.6 / h).ceil() as usize).min(512);
        let sa = GridSymbol::from_fn(h, 16, nm, |y, e| C64::new(1.0 + 0.5 * y.cos(), 0.2 * e) * (-4.0 * e * e).exp());
        let sb = GridSymbol::from_fn(h, 16, nm, |y, e| C64::new(y.sin(), 0.3 * (2.0 * y).cos()) * (-2.0 * (e - 0.3).powi(2)).exp());
        let r = composition_remainder(&sa, &sb, m)?;
        csv.extend(format!("{h:e},{r:.6e}\n").bytes());
        rows.push(json!({ "h": h, "remainder": r }));
    }
    let rem: Vec<f64> = rows.iter().map(|r| r["remainder"].as_f64().unwrap()).collect();
    let s = if hs.len() >= 2 { slope(&hs, &rem) } else { f64::NAN };
    let floor = m as f64 / 2.0 - 1.0;
    ctx.emit(&json!({ "M": m, "rows": rows, "slope": s, "expected_min_slope": floor }), Some(("table", csv)))?;
    Ok(hs.len() < 2 || s >= floor)
}

fn parametrix(cmd: &ParametrixCmd, ctx: &mut Ctx) -> Outcome {
    let (a, default_h): (&ModelArgs, Vec<f64>) = match cmd {
        ParametrixCmd::Combined(a) => (a, vec![1e-2, 10f64.powf(-2.5), 1e-3]),
        ParametrixCmd::G1(a) | ParametrixCmd::G2(a) => (a, vec![1e-2]),
    };
    model_keys(a, &mut ctx.cfg);
    let model = Model::read(&ctx.cfg, &default_h)?;
    let scen = model.scenarios(&ctx.cfg)?;
    match cmd {
        ParametrixCmd::G1(_) => {
            let mut rows = Vec::new();
            let mut ok = true;
            for s in &scen {
                let amps = build_amplitudes(s.params, &s.q, &s.qtilde)?;
                let f = s.gaussian_data();
                let u = assemble_u1(&f, &amps)?;
                let dn = dn_g1(&f, &amps)?;
                let fnorm = f.norm();
                let mut rep = to_value(&residual_g1(&u, &amps, dn.norm() / fnorm)?);
                rep["res_l2"] = json!(rep["res_l2"].as_f64().unwrap() / fnorm);
                rep["res_h1"] = json!(rep["res_h1"].as_f64().unwrap() / fnorm);
                if let QProfile::Const(qbar) = s.profile {
                    let p = s.params;
                    let (mut err, mut size): (f64, f64) = (0.0, 0.0);
                    for j in 0..s.nm {
                        let m = f.mode(j);
                        let cut = CutoffSpec::STANDARD.value(p.h * m as f64 * p.glancing_scale());
                        let want = exact_mode_dn(m, &p, qbar)? * cut * f.coeffs[j];
                        err = err.max((dn.coeffs[j] - want).norm());
                        size = size.max(want.norm());
                    }
                    let worst = err / size;
                    ok &= worst <= 1e-8;
                    rep["exact_max_rel_err"] = json!(worst);
                }
                rows.push(rep);
            }
            ctx.emit(&json!({ "rows": rows }), None)?;
            Ok(ok)
        }
        ParametrixCmd::G2(_) => {
            let mut rows = Vec::new();
            for s in &scen {
                let w = build_wkb(s.params, &s.q, &s.qtilde, model.opts)?;
                let f = s.gaussian_data();
                let u = w.assemble_u2(&f)?;
                let (l2, h1) = residual_norms(&apply_p0(&u, &s.params, &s.q, &s.qtilde)?);
                let fnorm = f.norm();
                rows.push(json!({
                    "h": s.params.h, "mu": s.params.mu, "eps": s.params.eps, "M": s.params.m,
                    "res_l2": l2 / fnorm, "res_h1": h1 / fnorm, "dn_norm": w.dn_g2(&f)?.norm() / fnorm,
                    "delta1": w.phase.delta1, "phase": to_value(&w.phase.diagnostics), "transport": to_value(&w.amps.diagnostics),
                }));
            }
            ctx.emit(&json!({ "rows": rows }), None)?;
            Ok(true)
        }
        ParametrixCmd::Combined(_) => {
            let mut reports = Vec::new();
            let mut csv = b"h,mu,res_l2,res_h1,dn_norm,boundary_error\n".to_vec();
            for s in &scen {
                let c = combine_parametrix(&s.gaussian_data(), &s.q, &s.qtilde, s.params, model.opts)?;
                let r = &c.report;
                csv.extend(format!("{:e},{:e},{:.6e},{:.6e},{:.6e},{:.3e}\n", r.h, r.mu, r.res_l2, r.res_h1, r.dn_norm, r.boundary_error).bytes());
                reports.push(c.report);
            }
            let hs: Vec<f64> = reports.iter().map(|r| r.h).collect();
            let res: Vec<f64> = reports.iter().map(|r| r.res_l2).collect();
            let s = if hs.len() >= 2 { slope(&hs, &res) } else { f64::NAN };
            ctx.emit(&json!({ "rows": to_value(&reports), "slope_res_l2": s }), Some(("slopes", csv)))?;
            Ok(true)
        }
    }
}

fn oracle(cmd: &OracleCmd, ctx: &mut Ctx) -> Outcome {
    let OracleCmd::Bvp(a) = cmd;
    model_keys(a, &mut ctx.cfg);
    let model = Model::read(&ctx.cfg, &[1e-2])?;
    let mut rows = Vec::new();
    for s in model.scenarios(&ctx.cfg)? {
        for k in 0..model.samples {
            let f = s.random_data(model.seed + k as u64);
            let sol = solve_bvp(&f, &s.q, &s.qtilde, &s.params, &BvpConfig::default())?;
            let approx = combined_dn(&f, &s.q, &s.qtilde, s.params, model.opts)?;
            rows.push(json!({
                "h": s.params.h, "mu": s.params.mu, "sample": k,
                "bvp": to_value(&sol.report),
                "parametrix_rel_err": approx.sub(&sol.dn).norm() / f.norm(),
            }));
        }
    }
    ctx.emit(&json!({ "rows": rows }), None)?;
    Ok(true)
}

fn disk_cfg(a: &TeArgs, cfg: &mut RunConfig) -> std::result::Result<DiskConfig, Failure> {
    for (k, v) in [("c1", a.c1), ("c2", a.c2), ("n1", a.n1), ("n2", a.n2)] {
        if let Some(v) = v {
            cfg.set(k, v);
        }
    }
    Ok(DiskConfig::new(cfg.get_or("c1", 1.0)?, cfg.get_or("c2", 1.0)?, cfg.get_or("n1", 4.0)?, cfg.get_or("n2", 1.0)?)?)
}

fn te(cmd: &TeCmd, ctx: &mut Ctx) -> Outcome {
    let a = match cmd {
        TeCmd::Find(a) | TeCmd::Count(a) | TeCmd::Weyl(a) | TeCmd::Region(a) | TeCmd::DnScan(a) | TeCmd::TSymbol(a) => a,
    };
    let cfg = &mut ctx.cfg;
    if let Some(v) = &a.rect {
        cfg.set("rect", v);
    }
    if let Some(v) = &a.h {
        cfg.set("h", v);
    }
    for (k, v) in [("m", a.m.map(|x| x as f64)), ("rmax", a.rmax), ("eps", a.eps), ("C", a.c_eps), ("left_c", a.left_c), ("mu_exp", a.mu_exp), ("floor", a.floor), ("strips", a.strips.map(|x| x as f64))] {
        if let Some(v) = v {
            cfg.set(k, v);
        }
    }
    cfg.check_known(&["c1", "c2", "n1", "n2", "rect", "m", "rmax", "eps", "C", "strips", "left_c", "h", "mu_exp", "floor", "seed"])?;
    let disk = disk_cfg(a, cfg)?;
    let find = FindOptions { seed: cfg.get_or("seed", FindOptions::default().seed)?, ..Default::default() };
    match cmd {
        TeCmd::Find(_) => {
            let r: Vec<f64> = cfg.get_list("rect")?.ok_or_else(|| Failure::Config("missing rect = re0,re1,im0,im1".into()))?;
            if r.len() != 4 {
                return Err(Failure::Config("rect needs four numbers".into()));
            }
            let m = cfg.get::<f64>("m")?.unwrap_or(0.0) as i64;
            let rs = ds::find_roots_with(m, Rect::new(r[0], r[1], r[2], r[3])?, &disk, find)?;
            let mut csv = Vec::new();
            rs.write_csv(&mut csv).unwrap();
            let rep = json!({ "disk": to_value(&disk), "roots": to_value(&rs.roots), "multiplicity": rs.multiplicity(), "ledger_digest": rs.ledger_digest() });
            ctx.emit(&rep, Some(("roots", csv)))?;
            Ok(true)
        }
        TeCmd::Count(_) | TeCmd::Weyl(_) => {
            let rmax = cfg.get_or("rmax", 40.0)?;
            let t = ds::count_te(rmax, &disk, find)?;
            let last = t.rows.last().map_or(0, |r| r.n) as f64 / (rmax * rmax);
            let deviation = (last - t.weyl_constant).abs();
            let mut csv = Vec::new();
            t.write_csv(&mut csv).unwrap();
            let mut roots = Vec::new();
            t.roots.write_csv(&mut roots).unwrap();
            let mut rep = to_value(&t);
            rep["disk"] = to_value(&disk);
            rep["final_ratio"] = json!(last);
            rep["deviation"] = json!(deviation);
            rep["ledger_digest"] = json!(t.roots.ledger_digest());
            let weyl = matches!(cmd, TeCmd::Weyl(_));
            ctx.emit(&rep, Some(("counting", csv)))?;
            if let (Some(dir), true) = (&ctx.out, !weyl) {
                let mut data = format!("# digest={}\n", ctx.cfg.digest()).into_bytes();
                data.extend(roots);
                std::fs::write(dir.join("te_count_roots.csv"), data).map_err(|e| Failure::Config(e.to_string()))?;
            }
            Ok(!weyl || (deviation <= 0.05 && t.tail_winding == 0))
        }
        TeCmd::Region(_) => {
            let opts = RegionOptions { strips: cfg.get_or("strips", 40.0)? as usize, left_c: cfg.get("left_c")?, find, ..Default::default() };
            let rep = ds::region_scan(&disk, cfg.get_or("eps", 0.1)?, cfg.get_or("C", 5.0)?, cfg.get_or("rmax", 20.0)?, opts)?;
            let mut csv = Vec::new();
            rep.control.write_csv(&mut csv).unwrap();
            let ok = rep.total_winding == 0 && rep.violations.is_empty();
            let mut v = to_value(&rep);
            v["disk"] = to_value(&disk);
            ctx.emit(&v, Some(("control_roots", csv)))?;
            Ok(ok)
        }
        TeCmd::DnScan(_) => {
            let hs: Vec<f64> = cfg.get_list("h")?.unwrap_or_else(|| vec![1e-2, 10f64.powf(-2.5), 1e-3]);
            let e: f64 = cfg.get_or("mu_exp", 0.8)?;
            let eps: f64 = cfg.get_or("eps", 0.2)?;
            let scan = ds::glancing_norm_scan(&hs, |h| h.powf(e), eps)?;
            let mut csv = Vec::new();
            scan.write_csv(&mut csv).unwrap();
            ctx.emit(&to_value(&scan), Some(("scan", csv)))?;
            Ok(scan.rows.len() < 2 || scan.slope >= eps / 4.0 - 0.05)
        }
        TeCmd::TSymbol(_) => {
            let hs: Vec<f64> = cfg.get_list("h")?.unwrap_or_else(|| vec![1e-2, 10f64.powf(-2.5)]);
            let e: f64 = cfg.get_or("mu_exp", 0.8)?;
            let eps: f64 = cfg.get_or("eps", 0.2)?;
            let floor: f64 = cfg.get_or("floor", 0.05)?;
            let mut reps = Vec::new();
            let mut csv = b"h,m,re,im,ratio\n".to_vec();
            for &h in &hs {
                let r = ds::t_symbol_report(h, C64::new(1.0, h.powf(e)), &disk, floor, eps)?;
                for v in &r.values {
                    csv.extend(format!("{h:e},{},{:.12e},{:.12e},{:.6e}\n", v.m, v.re, v.im, v.ratio).bytes());
                }
                reps.push(r);
            }
            let ok = reps.iter().all(|r| r.invertible);
            let summary: Vec<Value> = reps
                .iter()
                .map(|r| json!({ "h": r.h, "z": r.z, "exponent": r.exponent, "min_ratio": r.min_ratio, "argmin_mode": r.argmin_mode, "floor": r.floor, "invertible": r.invertible, "glancing": to_value(&r.glancing) }))
                .collect();
            ctx.emit(&json!({ "disk": to_value(&disk), "reports": summary }), Some(("values", csv)))?;
            Ok(ok)
        }
    }
}

fn command_name(g: &Group) -> String {
    match g {
        Group::Airy(AiryCmd::Selftest { .. }) => "airy selftest",
        Group::Airy(AiryCmd::Eval { .. }) => "airy eval",
        Group::Psdo(_) => "psdo check",
        Group::Parametrix(ParametrixCmd::G1(_)) => "parametrix g1",
        Group::Parametrix(ParametrixCmd::G2(_)) => "parametrix g2",
        Group::Parametrix(ParametrixCmd::Combined(_)) => "parametrix combined",
        Group::Oracle(_) => "oracle bvp",
        Group::Te(TeCmd::Find(_)) => "te find",
        Group::Te(TeCmd::Count(_)) => "te count",
        Group::Te(TeCmd::Weyl(_)) => "te weyl",
        Group::Te(TeCmd::Region(_)) => "te region",
        Group::Te(TeCmd::DnScan(_)) => "te dn-scan",
        Group::Te(TeCmd::TSymbol(_)) => "te t-symbol",
    }
    .to_string()
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", s);
    }
    let jobs = cli.jobs.unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    let mut ctx = Ctx { cfg, out: cli.out.clone(), name: command_name(&cli.group) };
    match &cli.group {
        Group::Airy(c) => airy(c, &mut ctx),
        Group::Psdo(c) => psdo(c, &mut ctx),
        Group::Parametrix(c) => parametrix(c, &mut ctx),
        Group::Oracle(c) => oracle(c, &mut ctx),
        Group::Te(c) => te(c, &mut ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
