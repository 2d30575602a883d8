//! Concave spectral penalties on singular values.
//!
//! Each penalty `p(eta)` already carries its strength `lambda`, so the
//! penalized objective is `f + sum_r p(xi_r(Z))` and the supergradient
//! `p'(eta)` is the per-singular-value threshold before dividing by `L`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{invalid, Result};

pub const DEFAULT_LQ_Q: f64 = 0.1;
pub const DEFAULT_SCAD_GAMMA: f64 = 5.0;
pub const DEFAULT_GDP_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PenaltyFamily {
    Nuclear,
    Lq { q: f64 },
    Scad { gamma: f64 },
    Gdp { gamma: f64 },
}

impl PenaltyFamily {
    /// Parses a family name with an optional hyper-parameter (`q` or `gamma`).
    /// Missing hyper-parameters fall back to the defaults.
    pub fn parse(name: &str, hyper: Option<f64>) -> Result<Self> {
        let fam = match name.to_ascii_lowercase().as_str() {
            "nuclear" | "l1" => PenaltyFamily::Nuclear,
            "lq" => PenaltyFamily::Lq { q: hyper.unwrap_or(DEFAULT_LQ_Q) },
            "scad" => PenaltyFamily::Scad { gamma: hyper.unwrap_or(DEFAULT_SCAD_GAMMA) },
            "gdp" => PenaltyFamily::Gdp { gamma: hyper.unwrap_or(DEFAULT_GDP_GAMMA) },
            other => return Err(invalid(format!("unknown penalty '{other}' (nuclear, lq, scad, gdp)"))),
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyFamily::Nuclear => Ok(()),
            PenaltyFamily::Lq { q } if q > 0.0 && q <= 1.0 => Ok(()),
            PenaltyFamily::Lq { q } => Err(invalid(format!("Lq needs 0 < q <= 1, got {q}"))),
            PenaltyFamily::Scad { gamma } if gamma > 2.0 => Ok(()),
            PenaltyFamily::Scad { gamma } => Err(invalid(format!("SCAD needs gamma > 2, got {gamma}"))),
            PenaltyFamily::Gdp { gamma } if gamma > 0.0 => Ok(()),
            PenaltyFamily::Gdp { gamma } => Err(invalid(format!("GDP needs gamma > 0, got {gamma}"))),
        }
    }

    /// Short label used in result tables, e.g. `L0.1`, `SCAD(5)`.
    pub fn label(&self) -> String {
        match *self {
            PenaltyFamily::Nuclear => "L1".to_string(),
            PenaltyFamily::Lq { q } => format!("L{q}"),
            PenaltyFamily::Scad { gamma } => format!("SCAD({gamma})"),
            PenaltyFamily::Gdp { gamma } => format!("GDP({gamma})"),
        }
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A penalty family together with its strength `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64) -> Result<Self> {
        family.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { family, lambda })
    }

    pub fn nuclear(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Nuclear, lambda)
    }

    pub fn lq(lambda: f64, q: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Lq { q }, lambda)
    }

    pub fn scad(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad { gamma }, lambda)
    }

    pub fn gdp(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Gdp { gamma }, lambda)
    }

    /// Same family with a different strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.family, lambda)
    }

    /// Penalty value `p(eta)`.
    pub fn value(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.value_unchecked(eta))
    }

    pub(crate) fn value_unchecked(&self, eta: f64) -> f64 {
        let lam = self.lambda;
        match self.family {
            PenaltyFamily::Nuclear => lam * eta,
            PenaltyFamily::Lq { q } => {
                if eta == 0.0 {
                    0.0
                } else {
                    lam * eta.powf(q)
                }
            }
            PenaltyFamily::Scad { gamma } => {
                if eta <= lam {
                    lam * eta
                } else if eta <= gamma * lam {
                    (-eta * eta + 2.0 * gamma * lam * eta - lam * lam) / (2.0 * (gamma - 1.0))
                } else {
                    lam * lam * (gamma + 1.0) / 2.0
                }
            }
            PenaltyFamily::Gdp { gamma } => lam * (eta / gamma).ln_1p(),
        }
    }

    /// Supergradient `p'(eta)`; `+inf` for Lq at zero.
    pub fn supergradient(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.supergradient_unchecked(eta))
    }

    pub(crate) fn supergradient_unchecked(&self, eta: f64) -> f64 {
        let lam = self.lambda;
        if lam == 0.0 {
            return 0.0;
        }
        match self.family {
            PenaltyFamily::Nuclear => lam,
            PenaltyFamily::Lq { q } => {
                if eta == 0.0 {
                    f64::INFINITY
                } else {
                    lam * q * eta.powf(q - 1.0)
                }
            }
            PenaltyFamily::Scad { gamma } => {
                if eta <= lam {
                    lam
                } else if eta <= gamma * lam {
                    (gamma * lam - eta) / (gamma - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyFamily::Gdp { gamma } => lam / (gamma + eta),
        }
    }

    /// Total penalty `sum_r p(xi_r)` over a set of singular values.
    pub fn total(&self, singular_values: &[f64]) -> f64 {
        singular_values.iter().map(|&s| self.value_unchecked(s.max(0.0))).sum()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(invalid(format!("eta must be >= 0, got {eta}")));
    }
    Ok(())
}

/// Scalar proximal map `argmin_{eta >= 0} (z - eta)^2 / 2 + p(eta)` by brute force.
///
/// Dense grid over `[0, z]` with step `1e-4 * max(1, z)`, then golden-section
/// refinement inside the bracketing grid cells. Meant for plotting
/// thresholding curves and as an independent check; the solver never calls it.
pub fn scalar_prox(spec: &PenaltySpec, z: f64) -> Result<f64> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(invalid(format!("z must be finite and >= 0, got {z}")));
    }
    let obj = |eta: f64| 0.5 * (z - eta) * (z - eta) + spec.value_unchecked(eta);
    if z == 0.0 {
        return Ok(0.0);
    }
    let step = 1e-4 * z.max(1.0);
    let n = (z / step).ceil() as usize;
    let mut best = (0.0, obj(0.0));
    for k in 1..=n {
        let eta = (k as f64 * step).min(z);
        let v = obj(eta);
        if v < best.1 {
            best = (eta, v);
        }
    }
    let lo = (best.0 - step).max(0.0);
    let hi = (best.0 + step).min(z);
    let refined = golden_section(obj, lo, hi, 1e-12 * z.max(1.0));
    Ok(if obj(refined) < best.1 { refined } else { best.0 })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // endpoints can win when the minimizer sits on the boundary
    let mid = 0.5 * (a + b);
    [a, mid, b]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .expect("non-empty")
}
