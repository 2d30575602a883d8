//! Relative squared-error metrics against simulated ground truth.

use ndarray::{s, Array1, ArrayView, ArrayView1, ArrayView2, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::simulation::{FullInformationFit, SimGroundTruth};
use crate::solver::{ModelFit, DEFAULT_RANK_TOL};

/// `||truth - estimate||_F^2 / ||truth||_F^2`.
pub fn rmse<D: Dimension>(truth: ArrayView<'_, f64, D>, estimate: ArrayView<'_, f64, D>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(shape(format!(
            "truth {:?} and estimate {:?} differ in shape",
            truth.shape(),
            estimate.shape()
        )));
    }
    let denom: f64 = truth.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(invalid("relative error undefined for a zero truth"));
    }
    let num: f64 = truth.iter().zip(estimate.iter()).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok(num / denom)
}

/// Number of values above `rank_tol * max(values)`.
pub fn estimated_rank(singular_values: &[f64], rank_tol: f64) -> usize {
    let top = singular_values.iter().copied().fold(0.0_f64, f64::max);
    if !(top > 0.0) {
        return 0;
    }
    singular_values.iter().filter(|&&v| v > rank_tol * top).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_theta: f64,
    pub rmse_theta1: f64,
    pub rmse_theta2: f64,
    pub rmse_mu: f64,
    pub rmse_z: f64,
    pub rmse_z1: f64,
    pub rmse_z2: f64,
    pub rank_hat: usize,
    pub sigma2_hat: f64,
    pub singular_values: Vec<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "rmse_theta",
        "rmse_theta1",
        "rmse_theta2",
        "rmse_mu",
        "rmse_z",
        "rmse_z1",
        "rmse_z2",
        "rank_hat",
        "sigma2_hat",
    ];

    /// Values in [`Self::CSV_HEADER`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.rmse_theta.to_string(),
            self.rmse_theta1.to_string(),
            self.rmse_theta2.to_string(),
            self.rmse_mu.to_string(),
            self.rmse_z.to_string(),
            self.rmse_z1.to_string(),
            self.rmse_z2.to_string(),
            self.rank_hat.to_string(),
            self.sigma2_hat.to_string(),
        ]
    }
}

/// True parameters needed for scoring, borrowed from a simulation or loaded
/// from files.
#[derive(Debug, Clone, Copy)]
pub struct TruthView<'a> {
    pub mu: ArrayView1<'a, f64>,
    pub z: ArrayView2<'a, f64>,
    pub j1: usize,
}

impl<'a> From<&'a SimGroundTruth> for TruthView<'a> {
    fn from(t: &'a SimGroundTruth) -> Self {
        TruthView {
            mu: t.mu.view(),
            z: t.z.view(),
            j1: t.j1(),
        }
    }
}

/// Compares estimated offsets and low-rank part with the truth.
pub fn evaluate_against(
    truth: TruthView<'_>,
    mu_hat: ArrayView1<'_, f64>,
    z_hat: ArrayView2<'_, f64>,
    sigma2_hat: f64,
    singular_values: &[f64],
    rank_tol: f64,
) -> Result<EvalReport> {
    let j1 = truth.j1;
    if z_hat.dim() != truth.z.dim() || mu_hat.len() != truth.mu.len() || truth.mu.len() != truth.z.ncols() || j1 > truth.z.ncols() {
        return Err(shape("estimate does not match the ground-truth dimensions"));
    }
    let theta = &truth.z + &truth.mu;
    let theta_hat = &z_hat + &mu_hat;
    Ok(EvalReport {
        rmse_theta: rmse(theta.view(), theta_hat.view())?,
        rmse_theta1: rmse(theta.slice(s![.., ..j1]), theta_hat.slice(s![.., ..j1]))?,
        rmse_theta2: rmse(theta.slice(s![.., j1..]), theta_hat.slice(s![.., j1..]))?,
        rmse_mu: rmse(truth.mu, mu_hat)?,
        rmse_z: rmse(truth.z, z_hat)?,
        rmse_z1: rmse(truth.z.slice(s![.., ..j1]), z_hat.slice(s![.., ..j1]))?,
        rmse_z2: rmse(truth.z.slice(s![.., j1..]), z_hat.slice(s![.., j1..]))?,
        rank_hat: estimated_rank(singular_values, rank_tol),
        sigma2_hat,
        singular_values: singular_values.to_vec(),
    })
}

pub fn evaluate_parts(
    truth: &SimGroundTruth,
    mu_hat: ArrayView1<'_, f64>,
    z_hat: ArrayView2<'_, f64>,
    sigma2_hat: f64,
    singular_values: &[f64],
    rank_tol: f64,
) -> Result<EvalReport> {
    evaluate_against(truth.into(), mu_hat, z_hat, sigma2_hat, singular_values, rank_tol)
}

pub fn evaluate_fit(fit: &ModelFit, truth: &SimGroundTruth) -> Result<EvalReport> {
    evaluate_fit_against(fit, truth.into())
}

pub fn evaluate_fit_against(fit: &ModelFit, truth: TruthView<'_>) -> Result<EvalReport> {
    evaluate_against(
        truth,
        fit.mu.view(),
        fit.z.view(),
        fit.sigma2,
        &fit.singular_values,
        DEFAULT_RANK_TOL,
    )
}

/// The full-information baseline has no noise-variance estimate of its own;
/// `sigma2_hat` is the mean squared residual on the quantitative block.
pub fn evaluate_full_information(fit: &FullInformationFit, truth: &SimGroundTruth) -> Result<EvalReport> {
    let j1 = truth.j1();
    let resid = &truth.x2 - &fit.theta.slice(s![.., j1..]);
    let sigma2_hat = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
    evaluate_parts(
        truth,
        fit.mu.view(),
        fit.z.view(),
        sigma2_hat,
        &fit.singular_values,
        DEFAULT_RANK_TOL,
    )
}

/// Singular values of a matrix, descending.
pub fn singular_values(m: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    Ok(Array1::from_vec(crate::linalg::thin_svd(m)?.s))
}
