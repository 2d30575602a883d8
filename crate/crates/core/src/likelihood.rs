//! Link functions, per-block negative log-likelihoods and their gradients.
//!
//! Binary entries follow a Bernoulli model with success probability
//! `phi(theta)`; quantitative entries are Gaussian with a shared variance.
//! Masked-out entries contribute nothing to any value or gradient, and their
//! stored values are never read.

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::data::CoupledData;
use crate::error::{invalid, shape, Result};

/// Probability clamp applied before logarithms of probit probabilities.
pub const PROB_EPS: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    #[default]
    Logit,
    Probit,
}

impl std::str::FromStr for LinkKind {
    type Err = crate::error::GscaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(LinkKind::Logit),
            "probit" => Ok(LinkKind::Probit),
            other => Err(invalid(format!("unknown link '{other}'"))),
        }
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn logistic(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn normal_cdf(theta: f64) -> f64 {
    0.5 * erfc(-theta * FRAC_1_SQRT_2)
}

#[inline]
fn normal_pdf(theta: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * theta * theta).exp()
}

/// Unchecked `phi(theta)`, kept strictly inside (0, 1).
#[inline]
pub(crate) fn phi(kind: LinkKind, theta: f64) -> f64 {
    let p = match kind {
        LinkKind::Logit => logistic(theta),
        LinkKind::Probit => normal_cdf(theta),
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Inverse link `phi(theta)`.
pub fn inverse_link(kind: LinkKind, theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(invalid(format!("theta must be finite, got {theta}")));
    }
    Ok(phi(kind, theta))
}

/// Negative log-likelihood of a single observed binary entry.
#[inline]
pub(crate) fn bernoulli_nll(kind: LinkKind, x: f64, theta: f64) -> f64 {
    match kind {
        // -log phi(t) = softplus(-t), -log(1 - phi(t)) = softplus(t)
        LinkKind::Logit => {
            if x == 1.0 {
                softplus(-theta)
            } else {
                softplus(theta)
            }
        }
        LinkKind::Probit => {
            let p = normal_cdf(theta).clamp(PROB_EPS, 1.0 - PROB_EPS);
            let q = normal_cdf(-theta).clamp(PROB_EPS, 1.0 - PROB_EPS);
            if x == 1.0 {
                -p.ln()
            } else {
                -q.ln()
            }
        }
    }
}

/// Derivative of [`bernoulli_nll`] with respect to `theta`.
#[inline]
pub(crate) fn bernoulli_grad(kind: LinkKind, x: f64, theta: f64) -> f64 {
    match kind {
        LinkKind::Logit => logistic(theta) - x,
        LinkKind::Probit => {
            // phi'(t) (Phi(t) - x) / (Phi(t) (1 - Phi(t))), split by outcome
            let d = normal_pdf(theta);
            if x == 1.0 {
                -d / normal_cdf(theta).max(PROB_EPS)
            } else {
                d / normal_cdf(-theta).max(PROB_EPS)
            }
        }
    }
}

fn check_same<A, B>(a: &ArrayView2<'_, A>, b: &ArrayView2<'_, B>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(invalid(format!("sigma2 must be positive and finite, got {sigma2}")));
    }
    Ok(())
}

/// Bernoulli negative log-likelihood `f1` over the observed binary entries.
pub fn binary_nll(
    x1: ArrayView2<'_, f64>,
    theta1: ArrayView2<'_, f64>,
    q1: ArrayView2<'_, bool>,
    kind: LinkKind,
) -> Result<f64> {
    check_same(&x1, &theta1, "binary block vs theta")?;
    check_same(&x1, &q1, "binary block vs mask")?;
    Ok(binary_nll_unchecked(x1, theta1, q1, kind))
}

pub(crate) fn binary_nll_unchecked(
    x1: ArrayView2<'_, f64>,
    theta1: ArrayView2<'_, f64>,
    q1: ArrayView2<'_, bool>,
    kind: LinkKind,
) -> f64 {
    let mut total = 0.0;
    Zip::from(&x1).and(&theta1).and(&q1).for_each(|&x, &t, &q| {
        if q {
            total += bernoulli_nll(kind, x, t);
        }
    });
    total
}

/// Sum of squared residuals and observed count of the quantitative block.
pub(crate) fn residual_ss(
    x2: ArrayView2<'_, f64>,
    theta2: ArrayView2<'_, f64>,
    q2: ArrayView2<'_, bool>,
) -> (f64, usize) {
    let mut ss = 0.0;
    let mut n = 0usize;
    Zip::from(&x2).and(&theta2).and(&q2).for_each(|&x, &t, &q| {
        if q {
            let r = x - t;
            ss += r * r;
            n += 1;
        }
    });
    (ss, n)
}

/// Gaussian negative log-likelihood `f2` including the `log(2 pi sigma2)` term.
pub fn quantitative_nll(
    x2: ArrayView2<'_, f64>,
    theta2: ArrayView2<'_, f64>,
    sigma2: f64,
    q2: ArrayView2<'_, bool>,
) -> Result<f64> {
    check_sigma2(sigma2)?;
    check_same(&x2, &theta2, "quantitative block vs theta")?;
    check_same(&x2, &q2, "quantitative block vs mask")?;
    let (ss, n) = residual_ss(x2, theta2, q2);
    Ok(gaussian_nll_from_ss(ss, n, sigma2))
}

#[inline]
pub(crate) fn gaussian_nll_from_ss(ss: f64, n: usize, sigma2: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    ss / (2.0 * sigma2) + 0.5 * n as f64 * (2.0 * PI * sigma2).ln()
}

/// Joint loss `f1 + f2` on the concatenated natural parameters `theta = [theta1 theta2]`.
pub fn joint_nll(data: &CoupledData, theta: ArrayView2<'_, f64>, sigma2: f64, kind: LinkKind) -> Result<f64> {
    check_sigma2(sigma2)?;
    if theta.dim() != (data.n_rows(), data.n_cols()) {
        return Err(shape(format!(
            "theta is {:?}, data is {:?}",
            theta.dim(),
            (data.n_rows(), data.n_cols())
        )));
    }
    Ok(joint_nll_unchecked(data, theta, sigma2, kind))
}

pub(crate) fn joint_nll_unchecked(data: &CoupledData, theta: ArrayView2<'_, f64>, sigma2: f64, kind: LinkKind) -> f64 {
    let j1 = data.j1();
    let f1 = binary_nll_unchecked(data.x1(), theta.slice(s![.., ..j1]), data.q1(), kind);
    let (ss, n) = residual_ss(data.x2(), theta.slice(s![.., j1..]), data.q2());
    f1 + gaussian_nll_from_ss(ss, n, sigma2)
}

/// Masked gradient of `f1`; zero at missing entries.
pub fn grad_f1(
    x1: ArrayView2<'_, f64>,
    theta1: ArrayView2<'_, f64>,
    q1: ArrayView2<'_, bool>,
    kind: LinkKind,
) -> Result<Array2<f64>> {
    check_same(&x1, &theta1, "binary block vs theta")?;
    check_same(&x1, &q1, "binary block vs mask")?;
    Ok(Zip::from(&x1)
        .and(&theta1)
        .and(&q1)
        .map_collect(|&x, &t, &q| if q { bernoulli_grad(kind, x, t) } else { 0.0 }))
}

/// Masked gradient of `f2` with respect to `theta2`; zero at missing entries.
pub fn grad_f2(
    x2: ArrayView2<'_, f64>,
    theta2: ArrayView2<'_, f64>,
    q2: ArrayView2<'_, bool>,
    sigma2: f64,
) -> Result<Array2<f64>> {
    check_sigma2(sigma2)?;
    check_same(&x2, &theta2, "quantitative block vs theta")?;
    check_same(&x2, &q2, "quantitative block vs mask")?;
    Ok(Zip::from(&x2)
        .and(&theta2)
        .and(&q2)
        .map_collect(|&x, &t, &q| if q { (t - x) / sigma2 } else { 0.0 }))
}

/// Masked joint gradient `Q ⊙ ∇f(theta)` over the concatenated matrix.
pub fn joint_gradient(data: &CoupledData, theta: ArrayView2<'_, f64>, sigma2: f64, kind: LinkKind) -> Result<Array2<f64>> {
    check_sigma2(sigma2)?;
    if theta.dim() != (data.n_rows(), data.n_cols()) {
        return Err(shape("theta does not match data"));
    }
    let j1 = data.j1();
    let mut g = Array2::zeros(theta.dim());
    Zip::from(g.slice_mut(s![.., ..j1]))
        .and(data.x1())
        .and(theta.slice(s![.., ..j1]))
        .and(data.q1())
        .for_each(|g, &x, &t, &q| {
            if q {
                *g = bernoulli_grad(kind, x, t);
            }
        });
    Zip::from(g.slice_mut(s![.., j1..]))
        .and(data.x2())
        .and(theta.slice(s![.., j1..]))
        .and(data.q2())
        .for_each(|g, &x, &t, &q| {
            if q {
                *g = (t - x) / sigma2;
            }
        });
    Ok(g)
}

/// Upper bound `L` on the per-entry curvature of both blocks.
///
/// The logistic Bernoulli loss has curvature at most 1/4, the probit one at
/// most 1, and the Gaussian block has curvature `1 / sigma2`.
pub fn lipschitz_bound(kind: LinkKind, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let binary: f64 = match kind {
        LinkKind::Logit => 0.25,
        LinkKind::Probit => 1.0,
    };
    Ok(binary.max(1.0 / sigma2))
}
