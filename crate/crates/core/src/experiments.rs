//! Simulation sweeps: penalty paths scored against ground truth, the SNR
//! sweep, cross-validation paths and the exact-rank overfitting demonstration.
//!
//! Every sweep returns tidy rows ready to be written as CSV.

use std::time::Instant;

use ndarray::{concatenate, s, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CoupledData;
use crate::error::{invalid, Result};
use crate::evaluation::{evaluate_fit, evaluate_fit_against, evaluate_parts, rmse, EvalReport, TruthView};
use crate::likelihood::LinkKind;
use crate::linalg;
use crate::model_selection::{self, bayes_error, lambda_bounds, log_grid, CvMode, GridSpec, PathConfig};
use crate::penalty::{PenaltyFamily, PenaltySpec};
use crate::simulation::{drop_uninformative_binary_columns, simulate_coupled, SimGroundTruth, SimParams};
use crate::solver::{fit_exact_rank, fit_gsca, FitConfig, ModelFit, DEFAULT_RANK_TOL};

/// Settings shared by the penalty sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eps_f: f64,
    pub max_iter: usize,
    pub grid_len: usize,
    pub search_eps: f64,
    pub search_start: f64,
    /// Seed of the random initialization of every fit.
    pub init_seed: u64,
    pub link: LinkKind,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_f: 1e-8,
            max_iter: crate::solver::DEFAULT_MAX_ITER,
            grid_len: model_selection::DEFAULT_GRID_LEN,
            search_eps: model_selection::DEFAULT_SEARCH_EPS,
            search_start: 1.0,
            init_seed: 0,
            link: LinkKind::Logit,
        }
    }
}

impl SweepConfig {
    pub fn fit_config(&self, penalty: PenaltySpec) -> FitConfig {
        FitConfig::new(penalty)
            .with_eps(self.eps_f)
            .with_max_iter(self.max_iter)
            .with_seed(self.init_seed)
            .with_link(self.link)
    }
}

/// The four penalties compared throughout: nuclear, L0.1, SCAD(5), GDP(1).
pub fn standard_families() -> Vec<PenaltyFamily> {
    vec![
        PenaltyFamily::Nuclear,
        PenaltyFamily::Lq { q: 0.1 },
        PenaltyFamily::Scad { gamma: 5.0 },
        PenaltyFamily::Gdp { gamma: 1.0 },
    ]
}

/// Simulated data set with constant binary columns removed from data and truth.
pub fn prepared_simulation(params: &SimParams) -> Result<(SimGroundTruth, CoupledData, usize)> {
    let truth = simulate_coupled(params)?;
    let q1 = ndarray::Array2::from_elem(truth.x1.dim(), true);
    let (_, _, keep) = drop_uninformative_binary_columns(truth.x1.view(), q1.view())?;
    let dropped = truth.j1() - keep.len();
    let truth = if dropped > 0 { truth.retain_binary_columns(&keep)? } else { truth };
    let data = truth.data();
    Ok((truth, data, dropped))
}

/// One fit on a penalty path, scored against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub model: String,
    pub lambda: f64,
    pub rmse_theta: f64,
    pub rmse_theta1: f64,
    pub rmse_theta2: f64,
    pub rmse_mu: f64,
    pub rmse_z: f64,
    pub rmse_z1: f64,
    pub rmse_z2: f64,
    pub rank: usize,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub saturated: bool,
    pub seconds: f64,
}

impl PathPoint {
    pub fn new(model: &str, lambda: f64, r: &EvalReport, fit: &ModelFit, seconds: f64) -> Self {
        Self {
            model: model.to_owned(),
            lambda,
            rmse_theta: r.rmse_theta,
            rmse_theta1: r.rmse_theta1,
            rmse_theta2: r.rmse_theta2,
            rmse_mu: r.rmse_mu,
            rmse_z: r.rmse_z,
            rmse_z1: r.rmse_z1,
            rmse_z2: r.rmse_z2,
            rank: r.rank_hat,
            sigma2: r.sigma2_hat,
            iterations: fit.iterations,
            converged: fit.converged,
            saturated: fit.warned_saturated,
            seconds,
        }
    }
}

/// A penalty path and its minimum-RMSE(theta) fit.
#[derive(Debug, Clone)]
pub struct RmsePath {
    pub family: PenaltyFamily,
    pub points: Vec<PathPoint>,
    pub best_index: usize,
    pub best_fit: ModelFit,
    pub best_report: EvalReport,
}

impl RmsePath {
    pub fn best(&self) -> &PathPoint {
        &self.points[self.best_index]
    }
}

/// Fits every value of a log-spaced penalty grid from a cold start and scores
/// each fit against the truth. Saturated fits are recorded but never selected.
pub fn rmse_path(truth: &SimGroundTruth, data: &CoupledData, family: PenaltyFamily, sweep: &SweepConfig) -> Result<RmsePath> {
    let probe = sweep.fit_config(PenaltySpec::new(family, 1.0)?);
    let bounds = lambda_bounds(data, &probe, sweep.search_start, sweep.search_eps)?;
    let grid = log_grid(bounds.upper, bounds.lower, sweep.grid_len)?;
    rmse_path_on_grid(truth, data, family, &grid, sweep)
}

pub fn rmse_path_on_grid(
    truth: &SimGroundTruth,
    data: &CoupledData,
    family: PenaltyFamily,
    grid: &[f64],
    sweep: &SweepConfig,
) -> Result<RmsePath> {
    rmse_path_against(truth.into(), data, family, grid, sweep)
}

/// As [`rmse_path_on_grid`], scoring against truth that may come from files.
pub fn rmse_path_against(
    truth: TruthView<'_>,
    data: &CoupledData,
    family: PenaltyFamily,
    grid: &[f64],
    sweep: &SweepConfig,
) -> Result<RmsePath> {
    if grid.is_empty() {
        return Err(invalid("empty penalty grid"));
    }
    let label = family.label();
    // cold starts make the grid points independent
    let fitted: Vec<(PathPoint, ModelFit, EvalReport)> = grid
        .par_iter()
        .map(|&lambda| {
            let start = Instant::now();
            let fit = fit_gsca(data, &sweep.fit_config(PenaltySpec::new(family, lambda)?))?;
            let report = evaluate_fit_against(&fit, truth)?;
            let point = PathPoint::new(&label, lambda, &report, &fit, start.elapsed().as_secs_f64());
            log::info!(
                "{label} lambda {lambda:.4e}: rmse(theta) {:.4}, rank {}, {} iterations{}",
                point.rmse_theta,
                point.rank,
                point.iterations,
                if point.saturated { ", saturated" } else { "" }
            );
            Ok((point, fit, report))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, ModelFit, EvalReport)> = None;
    for (point, fit, report) in fitted {
        let better = !fit.warned_saturated
            && best.as_ref().map_or(true, |(_, _, r)| report.rmse_theta < r.rmse_theta);
        if better {
            best = Some((points.len(), fit, report));
        }
        points.push(point);
    }
    let (best_index, best_fit, best_report) =
        best.ok_or_else(|| crate::error::GscaError::Numeric(format!("every {label} fit on the grid saturated")))?;
    Ok(RmsePath {
        family,
        points,
        best_index,
        best_fit,
        best_report,
    })
}

/// Rank-R PCA of the centered `[X1* X2]` for every `R`, keeping the one with
/// the smallest RMSE(theta).
#[derive(Debug, Clone)]
pub struct FullInformation {
    pub rank: usize,
    pub report: EvalReport,
    pub per_rank: Vec<(usize, f64)>,
}

pub fn full_information_best(truth: &SimGroundTruth, max_rank: usize) -> Result<FullInformation> {
    let mut x = concatenate(Axis(1), &[truth.x1_star.view(), truth.x2.view()]).expect("row counts agree");
    let mu = linalg::center_columns(&mut x);
    let svd = linalg::thin_svd(x.view())?;
    let theta = truth.theta();
    let limit = max_rank.min(svd.s.len());
    let mut per_rank = Vec::with_capacity(limit);
    let mut best: Option<(usize, f64)> = None;
    for r in 1..=limit {
        let kept: Vec<f64> = svd.s.iter().enumerate().map(|(k, &v)| if k < r { v } else { 0.0 }).collect();
        let z = svd.reconstruct_with(&kept);
        let err = rmse(theta.view(), (&z + &mu).view())?;
        per_rank.push((r, err));
        if best.map_or(true, |(_, e)| err < e) {
            best = Some((r, err));
        }
    }
    let (rank, _) = best.ok_or_else(|| invalid("max_rank must be at least 1"))?;
    let kept: Vec<f64> = svd.s.iter().enumerate().map(|(k, &v)| if k < rank { v } else { 0.0 }).collect();
    let z = svd.reconstruct_with(&kept);
    let j1 = truth.j1();
    let theta2_hat = &z.slice(s![.., j1..]) + &mu.slice(s![j1..]);
    let resid = &truth.x2 - &theta2_hat;
    let sigma2 = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
    let report = evaluate_parts(truth, mu.view(), z.view(), sigma2, &kept, DEFAULT_RANK_TOL)?;
    Ok(FullInformation { rank, report, per_rank })
}

/// One line of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub lambda: Option<f64>,
    pub rmse_theta: f64,
    pub rmse_theta1: f64,
    pub rmse_theta2: f64,
    pub rmse_mu: f64,
    pub rmse_z: f64,
    pub rank: usize,
    pub sigma2: f64,
}

impl ComparisonRow {
    fn from_report(model: String, lambda: Option<f64>, r: &EvalReport) -> Self {
        Self {
            model,
            lambda,
            rmse_theta: r.rmse_theta,
            rmse_theta1: r.rmse_theta1,
            rmse_theta2: r.rmse_theta2,
            rmse_mu: r.rmse_mu,
            rmse_z: r.rmse_z,
            rank: r.rank_hat,
            sigma2: r.sigma2_hat,
        }
    }
}

/// Minimum-RMSE(theta) comparison of the penalties and the full-information baseline.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub paths: Vec<RmsePath>,
    pub full_information: FullInformation,
}

pub fn compare_penalties(truth: &SimGroundTruth, data: &CoupledData, families: &[PenaltyFamily], sweep: &SweepConfig) -> Result<Comparison> {
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    for &family in families {
        let path = rmse_path(truth, data, family, sweep)?;
        rows.push(ComparisonRow::from_report(family.label(), Some(path.best().lambda), &path.best_report));
        paths.push(path);
    }
    let max_rank = truth.rows() - 1;
    let full = full_information_best(truth, max_rank)?;
    rows.push(ComparisonRow::from_report("full information".into(), None, &full.report));
    Ok(Comparison {
        rows,
        paths,
        full_information: full,
    })
}

/// Singular values of the truth, of estimates and of the noise, in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub source: String,
    pub index: usize,
    pub value: f64,
}

pub fn spectra(truth: &SimGroundTruth, comparison: &Comparison, count: usize) -> Result<Vec<SpectrumRow>> {
    let mut rows = Vec::new();
    let mut push = |source: &str, values: &[f64]| {
        for (k, &v) in values.iter().take(count).enumerate() {
            rows.push(SpectrumRow {
                source: source.to_owned(),
                index: k + 1,
                value: v,
            });
        }
    };
    push("true", &linalg::thin_svd(truth.z.view())?.s);
    for path in &comparison.paths {
        push(&path.family.label(), &path.best_fit.singular_values);
    }
    push("full information", &comparison.full_information.report.singular_values);
    push("noise", &linalg::thin_svd(truth.noise().view())?.s);
    Ok(rows)
}

/// Minimum RMSE(theta) over the penalty grid for each hyper-parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub family: String,
    pub hyper: f64,
    pub lambda: f64,
    pub rmse_theta: f64,
    pub rmse_mu: f64,
    pub rmse_z: f64,
    pub rank: usize,
}

pub fn default_hyper_grid(kind: &str) -> Vec<f64> {
    match kind {
        "lq" => (1..=10).map(|k| k as f64 / 10.0).collect(),
        // gamma must exceed 2
        "scad" => std::iter::once(2.5).chain((3..=10).map(|k| k as f64)).collect(),
        _ => vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
    }
}

pub fn hyper_sweep(truth: &SimGroundTruth, data: &CoupledData, kind: &str, values: &[f64], sweep: &SweepConfig) -> Result<Vec<HyperRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &h in values {
        let family = PenaltyFamily::parse(kind, Some(h))?;
        let path = rmse_path(truth, data, family, sweep)?;
        let best = path.best();
        rows.push(HyperRow {
            family: kind.to_owned(),
            hyper: h,
            lambda: best.lambda,
            rmse_theta: best.rmse_theta,
            rmse_mu: best.rmse_mu,
            rmse_z: best.rmse_z,
            rank: best.rank,
        });
    }
    Ok(rows)
}

/// Minimum-RMSE(theta) results at one SNR level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr: f64,
    pub model: String,
    pub lambda: Option<f64>,
    pub rmse_theta: f64,
    pub rmse_mu: f64,
    pub rmse_z: f64,
    pub rmse_z1: f64,
    pub rmse_z2: f64,
    pub rank: usize,
}

/// `count` log-spaced SNR values in `[lo, hi]`, ascending.
pub fn snr_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    let mut g = log_grid(hi, lo, count)?;
    g.reverse();
    Ok(g)
}

/// Re-simulates with equal SNRs at every level, keeping every other draw fixed,
/// and records the minimum-RMSE(theta) fit of each penalty.
pub fn snr_sweep(base: &SimParams, snrs: &[f64], families: &[PenaltyFamily], sweep: &SweepConfig) -> Result<Vec<SnrRow>> {
    let mut rows = Vec::new();
    for &snr in snrs {
        let params = SimParams {
            snr1: snr,
            snr2: snr,
            ..base.clone()
        };
        let (truth, data, _) = prepared_simulation(&params)?;
        for &family in families {
            let path = rmse_path(&truth, &data, family, sweep)?;
            let r = &path.best_report;
            rows.push(SnrRow {
                snr,
                model: family.label(),
                lambda: Some(path.best().lambda),
                rmse_theta: r.rmse_theta,
                rmse_mu: r.rmse_mu,
                rmse_z: r.rmse_z,
                rmse_z1: r.rmse_z1,
                rmse_z2: r.rmse_z2,
                rank: r.rank_hat,
            });
        }
        let full = full_information_best(&truth, truth.rows() - 1)?;
        let r = &full.report;
        rows.push(SnrRow {
            snr,
            model: "full information".into(),
            lambda: None,
            rmse_theta: r.rmse_theta,
            rmse_mu: r.rmse_mu,
            rmse_z: r.rmse_z,
            rmse_z1: r.rmse_z1,
            rmse_z2: r.rmse_z2,
            rank: r.rank_hat,
        });
    }
    Ok(rows)
}

/// Cross-validation path scored against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPathRow {
    pub lambda: f64,
    pub cv_error: f64,
    pub cv_se: f64,
    pub rank_cv: f64,
    pub rank_fit: Option<usize>,
    pub rmse_theta: Option<f64>,
    pub bayes_error: f64,
}

#[derive(Debug, Clone)]
pub struct CvStudy {
    pub rows: Vec<CvPathRow>,
    pub result: model_selection::CvResult,
    pub best_fit: ModelFit,
    pub bayes_error: f64,
}

pub fn cv_study(truth: &SimGroundTruth, data: &CoupledData, config: &PathConfig) -> Result<CvStudy> {
    let bayes = bayes_error(data, truth.theta().view(), truth.params.sigma2, config.fit.link)?;
    let mut scores: Vec<(f64, f64)> = Vec::new();
    let (result, best_fit) = model_selection::lambda_path_with(data, config, |lambda, fit| {
        if let Ok(r) = evaluate_fit(fit, truth) {
            scores.push((lambda, r.rmse_theta));
        }
    })?;
    let rows = result
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| CvPathRow {
            lambda,
            cv_error: result.cv_error[i],
            cv_se: result.cv_se[i],
            rank_cv: result.rank_cv[i],
            rank_fit: result.rank_refit[i],
            rmse_theta: scores.iter().rev().find(|(l, _)| *l == lambda).map(|(_, e)| *e),
            bayes_error: bayes,
        })
        .collect();
    Ok(CvStudy {
        rows,
        result,
        best_fit,
        bayes_error: bayes,
    })
}

/// Minimum RMSE(theta) and minimum CV error per GDP hyper-parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCvRow {
    pub gamma: f64,
    pub min_rmse_theta: f64,
    pub min_cv_error: f64,
    pub cv_se: f64,
    pub lambda_rmse: f64,
    pub lambda_cv: f64,
}

pub fn gamma_cv_sweep(truth: &SimGroundTruth, data: &CoupledData, gammas: &[f64], config: &PathConfig) -> Result<Vec<GammaCvRow>> {
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let fit = FitConfig {
            penalty: PenaltySpec::gdp(1.0, gamma)?,
            ..config.fit.clone()
        };
        let cfg = PathConfig { fit, ..config.clone() };
        let study = cv_study(truth, data, &cfg)?;
        let (mut best_rmse, mut lambda_rmse) = (f64::INFINITY, f64::NAN);
        for row in &study.rows {
            if let Some(e) = row.rmse_theta {
                if e < best_rmse {
                    best_rmse = e;
                    lambda_rmse = row.lambda;
                }
            }
        }
        let b = study.result.best_index;
        rows.push(GammaCvRow {
            gamma,
            min_rmse_theta: best_rmse,
            min_cv_error: study.result.cv_error[b],
            cv_se: study.result.cv_se[b],
            lambda_rmse,
            lambda_cv: study.result.best_lambda,
        });
    }
    Ok(rows)
}

/// Exact-rank fits at two tolerances from the same starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitRow {
    pub eps_f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_abs_b1: f64,
    pub max_abs_b2: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct OverfitStudy {
    pub rows: Vec<OverfitRow>,
    pub fits: Vec<ModelFit>,
}

pub fn overfit_study(data: &CoupledData, rank: usize, eps: &[f64], init_seed: u64, max_iter: usize) -> Result<OverfitStudy> {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &e in eps {
        // the penalty is ignored by the exact-rank solver
        let cfg = FitConfig::new(PenaltySpec::nuclear(0.0)?)
            .with_eps(e)
            .with_seed(init_seed)
            .with_max_iter(max_iter);
        let fit = fit_exact_rank(data, rank, &cfg)?;
        let max_abs = |m: &ndarray::Array2<f64>| m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        rows.push(OverfitRow {
            eps_f: e,
            iterations: fit.iterations,
            converged: fit.converged,
            max_abs_b1: max_abs(&fit.b1),
            max_abs_b2: max_abs(&fit.b2),
            final_loss: *fit.loss_trace.last().expect("trace is never empty"),
        });
        fits.push(fit);
    }
    Ok(OverfitStudy { rows, fits })
}

/// Path configuration used for the cross-validation experiments.
pub fn cv_path_config(gamma: f64, eps_f: f64, folds: usize, grid_len: usize, seed: u64) -> Result<PathConfig> {
    let fit = FitConfig::new(PenaltySpec::gdp(1.0, gamma)?).with_eps(eps_f).with_seed(seed);
    Ok(PathConfig {
        fit,
        folds,
        fold_seed: seed,
        grid: GridSpec::Auto { len: grid_len },
        mode: CvMode::WarmSequential,
        ..PathConfig::new(FitConfig::new(PenaltySpec::gdp(1.0, gamma)?))
    })
}
