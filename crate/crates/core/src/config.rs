//! Flat `key = value` run configuration and the standard model scenarios.

use crate::error::{Error, Result};
use crate::glancing_parametrix::SpectralParams;
use crate::symbol_calculus::{GridSymbol, ModeFunction};
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Key-value parameters; later `set` calls override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses lines `key = value`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParams(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::InvalidParams(format!("line {}: empty key", n + 1)));
            }
            if cfg.values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidParams(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParams(format!("{key} = {v:?} is not a valid {}", std::any::type_name::<T>()))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {s:?}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidParams(format!("unknown key {k}; expected one of {}", allowed.join(", ")))),
            None => Ok(()),
        }
    }

    /// SHA-256 over the sorted `key=value` lines.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n"));
        }
        hex::encode(h.finalize())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Coefficient `q(y)` of the model operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QProfile {
    Const(f64),
    /// `1 + amp sin y`.
    Sin(f64),
}

impl FromStr for QProfile {
    type Err = Error;

    /// `const`, `const:<v>`, `sin`, `sin:<amp>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |d: f64| -> Result<f64> {
            arg.map_or(Ok(d), |a| a.parse().map_err(|_| Error::InvalidParams(format!("bad q argument {a:?}"))))
        };
        let q = match kind {
            "const" => QProfile::Const(num(1.0)?),
            "sin" => QProfile::Sin(num(0.3)?),
            _ => return Err(Error::InvalidParams(format!("unknown q profile {s:?}"))),
        };
        match q {
            QProfile::Const(v) if !(v > 0.0) => Err(Error::InvalidParams(format!("q = {v} must be positive"))),
            QProfile::Sin(a) if !(a.abs() < 1.0) => Err(Error::InvalidParams(format!("|amp| = {a} must be below 1"))),
            _ => Ok(q),
        }
    }
}

/// Grids and coefficients for one `(h, mu, eps, M)` point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: SpectralParams,
    pub profile: QProfile,
    pub ny: usize,
    pub nm: usize,
    pub q: GridSymbol,
    pub qtilde: GridSymbol,
}

impl Scenario {
    /// `nm` covers `|eta| <= 2 h^eps` with 64 spare modes; `ny = 32` (8 for constant q).
    pub fn new(h: f64, mu: f64, eps: f64, m: usize, profile: QProfile) -> Result<Self> {
        let params = SpectralParams::new(h, mu, eps, m)?;
        let nm = ((4.0 * h.powf(eps - 1.0) + 64.0) as usize).next_power_of_two();
        let ny = match profile {
            QProfile::Const(_) => 8,
            QProfile::Sin(_) => 32,
        };
        let q = match profile {
            QProfile::Const(v) => GridSymbol::constant(h, ny, nm, C64::new(v, 0.0)),
            QProfile::Sin(a) => GridSymbol::from_fn(h, ny, nm, |y, _| C64::new(1.0 + a * y.sin(), 0.0)),
        };
        let qtilde = GridSymbol::constant(h, ny, nm, C64::new(0.0, 0.0));
        Ok(Scenario { params, profile, ny, nm, q, qtilde })
    }

    /// `exp(-(2 eta / h^eps)^2)` on every mode.
    pub fn gaussian_data(&self) -> ModeFunction {
        let p = &self.params;
        let mut f = ModeFunction::zeros(p.h, self.nm);
        for j in 0..self.nm {
            let x = 2.0 * p.h * f.mode(j) as f64 / p.h.powf(p.eps);
            f.coeffs[j] = C64::new((-x * x).exp(), 0.0);
        }
        f
    }

    /// Uniform random coefficients in the unit square on modes with `|eta| <= h^eps / 2`.
    pub fn random_data(&self, seed: u64) -> ModeFunction {
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ModeFunction::zeros(p.h, self.nm);
        for j in 0..self.nm {
            if (p.h * f.mode(j) as f64).abs() <= 0.5 * p.h.powf(p.eps) {
                f.coeffs[j] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse("h = 1e-2, 1e-3 # list\n\nmu=0.5\n").unwrap();
        assert_eq!(c.get_list::<f64>("h").unwrap().unwrap(), vec![1e-2, 1e-3]);
        assert_eq!(c.get::<f64>("mu").unwrap(), Some(0.5));
        let d = c.digest();
        c.set("mu", 0.25);
        assert_eq!(c.get::<f64>("mu").unwrap(), Some(0.25));
        assert_ne!(c.digest(), d);
        assert!(c.check_known(&["h", "mu"]).is_ok());
        assert!(c.check_known(&["h"]).is_err());
        assert!(c.get::<usize>("mu").is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(RunConfig::parse("h 1e-2").is_err());
        assert!(RunConfig::parse("h=1\nh=2").is_err());
        assert!(RunConfig::parse("=2").is_err());
    }

    #[test]
    fn digest_ignores_order() {
        let a = RunConfig::parse("a=1\nb=2").unwrap();
        let b = RunConfig::parse("b=2\na=1").unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn profiles() {
        assert_eq!("const".parse::<QProfile>().unwrap(), QProfile::Const(1.0));
        assert_eq!("sin:0.2".parse::<QProfile>().unwrap(), QProfile::Sin(0.2));
        assert!("sin:1.5".parse::<QProfile>().is_err());
        assert!("cos".parse::<QProfile>().is_err());
    }
}
