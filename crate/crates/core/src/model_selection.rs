//! Element-wise K-fold cross-validation with diagonal leave-out patterns and
//! a log-spaced search over the penalty strength.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CoupledData;
use crate::error::{invalid, GscaError, Result};
use crate::likelihood::{joint_nll, LinkKind};
use crate::penalty::{PenaltyFamily, PenaltySpec};
use crate::solver::{fit_gsca, FitConfig, Init, ModelFit};

pub const DEFAULT_FOLDS: usize = 7;
pub const DEFAULT_GRID_LEN: usize = 30;
/// Tolerance used for the cheap fits that bracket the penalty grid.
pub const DEFAULT_SEARCH_EPS: f64 = 1e-2;
const MAX_FOLD_RETRIES: usize = 100;
const MAX_BRACKET_STEPS: usize = 60;

/// Fold label of every observed entry, per block; `None` marks missing entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold1: Array2<Option<usize>>,
    pub fold2: Array2<Option<usize>>,
}

impl FoldAssignment {
    /// Fold labels over the concatenated `I x (J1 + J2)` layout.
    pub fn fold_of_entry(&self) -> Array2<Option<usize>> {
        ndarray::concatenate(Axis(1), &[self.fold1.view(), self.fold2.view()]).expect("row counts agree")
    }

    /// Entries of fold `k`, per block.
    pub fn held_out(&self, k: usize) -> (Array2<bool>, Array2<bool>) {
        (
            self.fold1.mapv(|f| f == Some(k)),
            self.fold2.mapv(|f| f == Some(k)),
        )
    }

    /// Sizes of every fold, per block.
    pub fn fold_sizes(&self) -> (Vec<usize>, Vec<usize>) {
        let count = |m: &Array2<Option<usize>>| {
            let mut sizes = vec![0; self.k];
            for f in m.iter().flatten() {
                sizes[*f] += 1;
            }
            sizes
        };
        (count(&self.fold1), count(&self.fold2))
    }
}

/// Assigns the observed entries of one block column by column: column `j` is
/// traversed from row `offsets[j]` with wrap-around, and successive observed
/// entries receive successive fold labels from a counter shared across
/// columns. Neighbouring rows therefore land in different folds and fold
/// sizes differ by at most one.
fn assign_block(q: ArrayView2<'_, bool>, k: usize, offsets: &[usize]) -> Array2<Option<usize>> {
    let (rows, cols) = q.dim();
    let mut out = Array2::from_elem((rows, cols), None);
    let mut counter = 0usize;
    for j in 0..cols {
        for step in 0..rows {
            let i = (offsets[j] + step) % rows;
            if q[[i, j]] {
                out[[i, j]] = Some(counter % k);
                counter += 1;
            }
        }
    }
    out
}

/// True if no row or column with at least two observed entries has all of
/// them in one fold.
fn covers_rows_and_columns(folds: &Array2<Option<usize>>) -> bool {
    let spread = |lane: ndarray::ArrayView1<'_, Option<usize>>| {
        let mut seen = lane.iter().flatten();
        match seen.next() {
            Some(first) => {
                let rest: Vec<_> = seen.collect();
                rest.is_empty() || rest.iter().any(|f| *f != first)
            }
            None => true,
        }
    };
    folds.axis_iter(Axis(0)).all(spread) && folds.axis_iter(Axis(1)).all(spread)
}

fn check_fold_count(data: &CoupledData, k: usize) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    let smallest = data.n_observed1().min(data.n_observed2());
    if k > smallest {
        return Err(invalid(format!(
            "{k} folds exceed the {smallest} observed entries of the smaller block"
        )));
    }
    Ok(())
}

/// Diagonal-style folds with explicit per-column starting rows.
pub fn diagonal_folds_with_offsets(
    data: &CoupledData,
    k: usize,
    offsets1: &[usize],
    offsets2: &[usize],
) -> Result<FoldAssignment> {
    check_fold_count(data, k)?;
    if offsets1.len() != data.j1() || offsets2.len() != data.j2() {
        return Err(invalid("one offset per column is required"));
    }
    Ok(FoldAssignment {
        k,
        fold1: assign_block(data.q1(), k, offsets1),
        fold2: assign_block(data.q2(), k, offsets2),
    })
}

/// Diagonal-style folds with column offsets from a seeded permutation.
///
/// Re-draws the offsets until every row and column of both blocks spans at
/// least two folds; gives up after 100 attempts.
pub fn diagonal_folds(data: &CoupledData, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_fold_count(data, k)?;
    let rows = data.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = |cols: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut perm: Vec<usize> = (0..cols.max(rows)).collect();
        perm.shuffle(rng);
        perm.into_iter().take(cols).map(|p| p % rows).collect()
    };
    for _ in 0..MAX_FOLD_RETRIES {
        let o1 = offsets(data.j1(), &mut rng);
        let o2 = offsets(data.j2(), &mut rng);
        let folds = diagonal_folds_with_offsets(data, k, &o1, &o2)?;
        if covers_rows_and_columns(&folds.fold1) && covers_rows_and_columns(&folds.fold2) {
            return Ok(folds);
        }
    }
    Err(invalid(format!(
        "could not find {k} folds covering every row and column after {MAX_FOLD_RETRIES} attempts"
    )))
}

/// Penalty strength rescaled to the fraction of observed entries.
pub fn effective_lambda(lambda: f64, n_observed: usize, rows: usize, cols: usize) -> f64 {
    let total = rows * cols;
    if n_observed == total {
        return lambda;
    }
    lambda * n_observed as f64 / total as f64
}

/// How the folds of one penalty value are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    /// Folds in order, each warm-started from the previous fold's fit.
    #[default]
    WarmSequential,
    /// Independent cold starts evaluated concurrently.
    ParallelCold,
}

/// Diagnostics of one fold fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub lambda: f64,
    pub fold: usize,
    pub effective_lambda: f64,
    pub held_out: usize,
    /// Held-out negative log-likelihood per held-out entry; `inf` when saturated.
    pub error: f64,
    pub rank: usize,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub mean: f64,
    pub se: f64,
    pub per_fold: Vec<f64>,
    pub records: Vec<FoldRecord>,
    /// Fit of the last fold, used to initialize later fits.
    pub last_fit: ModelFit,
}

impl CvOutcome {
    pub fn mean_rank(&self) -> f64 {
        self.records.iter().map(|r| r.rank as f64).sum::<f64>() / self.records.len() as f64
    }
}

fn fold_fit(
    data: &CoupledData,
    folds: &FoldAssignment,
    fold: usize,
    lambda: f64,
    config: &FitConfig,
    init: Init,
) -> Result<(FoldRecord, ModelFit)> {
    let (h1, h2) = folds.held_out(fold);
    let train = data.with_hidden(h1.view(), h2.view())?;
    let test = data.with_hidden(h1.mapv(|h| !h).view(), h2.mapv(|h| !h).view())?;
    let held_out = test.n_observed();
    let lam = effective_lambda(lambda, train.n_observed(), data.n_rows(), data.n_cols());
    let cfg = FitConfig {
        penalty: config.penalty.with_lambda(lam)?,
        init,
        ..config.clone()
    };
    let fit = fit_gsca(&train, &cfg)?;
    let error = if fit.warned_saturated {
        f64::INFINITY
    } else {
        joint_nll(&test, fit.theta().view(), fit.sigma2, fit.link)? / held_out as f64
    };
    let record = FoldRecord {
        lambda,
        fold,
        effective_lambda: lam,
        held_out,
        error,
        rank: fit.rank(),
        sigma2: fit.sigma2,
        iterations: fit.iterations,
        converged: fit.converged,
        saturated: fit.warned_saturated,
    };
    Ok((record, fit))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if !mean.is_finite() || values.len() < 2 {
        return (mean, if mean.is_finite() { 0.0 } else { f64::INFINITY });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Cross-validation error of one penalty strength.
///
/// `config.penalty` supplies the family; its λ is replaced by the rescaled
/// `lambda` of each training set. The first fold starts from `config.init`.
pub fn cv_error_with_mode(
    data: &CoupledData,
    folds: &FoldAssignment,
    lambda: f64,
    config: &FitConfig,
    mode: CvMode,
) -> Result<CvOutcome> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let results: Vec<(FoldRecord, ModelFit)> = match mode {
        CvMode::WarmSequential => {
            let mut out = Vec::with_capacity(folds.k);
            let mut init = config.init.clone();
            for fold in 0..folds.k {
                let (rec, fit) = fold_fit(data, folds, fold, lambda, config, init)?;
                init = Init::WarmStart(Box::new(fit.clone()));
                out.push((rec, fit));
            }
            out
        }
        CvMode::ParallelCold => (0..folds.k)
            .into_par_iter()
            .map(|fold| fold_fit(data, folds, fold, lambda, config, Init::Random))
            .collect::<Result<_>>()?,
    };
    let per_fold: Vec<f64> = results.iter().map(|(r, _)| r.error).collect();
    let (mean, se) = mean_and_se(&per_fold);
    let last_fit = results.last().expect("at least two folds").1.clone();
    Ok(CvOutcome {
        mean,
        se,
        per_fold,
        records: results.into_iter().map(|(r, _)| r).collect(),
        last_fit,
    })
}

pub fn cv_error(data: &CoupledData, folds: &FoldAssignment, lambda: f64, config: &FitConfig) -> Result<CvOutcome> {
    cv_error_with_mode(data, folds, lambda, config, CvMode::WarmSequential)
}

/// Where the penalty grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    /// `len` log-spaced values between the bracketing bounds.
    Auto { len: usize },
    /// Values used as given (sorted descending).
    Explicit(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { len: DEFAULT_GRID_LEN }
    }
}

#[derive(Debug, Clone)]
pub struct PathConfig {
    /// Family, link, tolerance and seed of every fit; λ is overridden.
    pub fit: FitConfig,
    pub folds: usize,
    pub fold_seed: u64,
    pub grid: GridSpec,
    pub search_eps: f64,
    /// Starting value of the bracketing search.
    pub search_start: f64,
    pub mode: CvMode,
    /// Refit the full data at every grid point, not only at the selected one.
    pub refit_every: bool,
}

impl PathConfig {
    pub fn new(fit: FitConfig) -> Self {
        Self {
            fit,
            folds: DEFAULT_FOLDS,
            fold_seed: 0,
            grid: GridSpec::default(),
            search_eps: DEFAULT_SEARCH_EPS,
            search_start: 1.0,
            mode: CvMode::WarmSequential,
            refit_every: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub family: PenaltyFamily,
    /// Descending.
    pub lambda_grid: Vec<f64>,
    pub cv_error: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub rank_cv: Vec<f64>,
    /// `None` where no full-data refit was made.
    pub rank_refit: Vec<Option<usize>>,
    pub best_lambda: f64,
    pub best_index: usize,
    pub folds: usize,
    pub log: Vec<FoldRecord>,
}

/// Bracketing penalty values found with low-precision fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaBounds {
    /// Smallest probed value whose fit has rank at most one.
    pub upper: f64,
    /// Largest probed value whose fit has (nearly) full rank or saturates.
    pub lower: f64,
}

fn quick_fit(data: &CoupledData, base: &FitConfig, lambda: f64, eps: f64) -> Result<ModelFit> {
    let cfg = FitConfig {
        penalty: base.penalty.with_lambda(lambda)?,
        eps_f: eps,
        init: Init::Random,
        ..base.clone()
    };
    fit_gsca(data, &cfg)
}

/// Doubling / halving search for the ends of the penalty grid.
///
/// Every probe is a cold start at tolerance `eps`, so the bounds do not
/// depend on the probing order.
pub fn lambda_bounds(data: &CoupledData, base: &FitConfig, start: f64, eps: f64) -> Result<LambdaBounds> {
    if !(start > 0.0) || !start.is_finite() {
        return Err(invalid("search start must be positive"));
    }
    let full = data.n_rows().min(data.n_cols()) - 1;
    let low_rank = |fit: &ModelFit| !fit.warned_saturated && fit.rank() <= 1;
    let high_rank = |fit: &ModelFit| fit.warned_saturated || fit.rank() >= full;

    let mut lam = start;
    let mut fit = quick_fit(data, base, lam, eps)?;
    let mut trail = vec![(lam, fit.rank(), fit.warned_saturated)];
    let mut steps = 0;
    if low_rank(&fit) {
        // shrink until the rank exceeds one, keep the last value that did not
        loop {
            steps += 1;
            let next = lam / 2.0;
            let f = quick_fit(data, base, next, eps)?;
            trail.push((next, f.rank(), f.warned_saturated));
            if !low_rank(&f) {
                break;
            }
            lam = next;
            if steps > MAX_BRACKET_STEPS {
                return Err(bracket_error("rank never exceeded one", &trail));
            }
        }
    } else {
        while !low_rank(&fit) {
            steps += 1;
            lam *= 2.0;
            fit = quick_fit(data, base, lam, eps)?;
            trail.push((lam, fit.rank(), fit.warned_saturated));
            if steps > MAX_BRACKET_STEPS {
                return Err(bracket_error("rank never dropped to one", &trail));
            }
        }
    }
    let upper = lam;

    let mut lower = upper;
    steps = 0;
    loop {
        steps += 1;
        lower /= 2.0;
        let f = quick_fit(data, base, lower, eps)?;
        trail.push((lower, f.rank(), f.warned_saturated));
        if high_rank(&f) {
            break;
        }
        if steps > MAX_BRACKET_STEPS {
            return Err(bracket_error("full rank never reached", &trail));
        }
    }
    log::debug!("lambda bounds [{lower}, {upper}] after probes {trail:?}");
    Ok(LambdaBounds { upper, lower })
}

fn bracket_error(what: &str, trail: &[(f64, usize, bool)]) -> GscaError {
    let probes: Vec<String> = trail
        .iter()
        .map(|(l, r, s)| format!("lambda={l:.4e} rank={r}{}", if *s { " saturated" } else { "" }))
        .collect();
    GscaError::Numeric(format!("penalty grid search failed: {what}; probes: {}", probes.join(", ")))
}

/// `len` log-spaced values from `upper` down to `lower`.
pub fn log_grid(upper: f64, lower: f64, len: usize) -> Result<Vec<f64>> {
    if !(upper > 0.0 && lower > 0.0) || len == 0 {
        return Err(invalid("log grid needs positive bounds and length"));
    }
    if len == 1 {
        return Ok(vec![upper]);
    }
    let (a, b) = (upper.ln(), lower.ln());
    Ok((0..len)
        .map(|t| (a + (b - a) * t as f64 / (len - 1) as f64).exp())
        .collect())
}

/// Grid for `config`: explicit values, or the log grid between searched bounds.
pub fn resolve_grid(data: &CoupledData, config: &PathConfig) -> Result<Vec<f64>> {
    let mut grid = match &config.grid {
        GridSpec::Explicit(values) => {
            if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(invalid("explicit grid needs finite nonnegative values"));
            }
            values.clone()
        }
        GridSpec::Auto { len } => {
            let b = lambda_bounds(data, &config.fit, config.search_start, config.search_eps)?;
            log_grid(b.upper, b.lower, *len)?
        }
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    Ok(grid)
}

/// Cross-validated penalty path with a full-data refit.
///
/// Grid values are processed in descending order. Each value starts its
/// first fold from the random initialization of `config.fit`; later folds are
/// warm-started. Full-data refits start from the fit of the last fold.
/// `on_refit` sees every full-data refit.
pub fn lambda_path_with<F>(data: &CoupledData, config: &PathConfig, mut on_refit: F) -> Result<(CvResult, ModelFit)>
where
    F: FnMut(f64, &ModelFit),
{
    let grid = resolve_grid(data, config)?;
    let folds = diagonal_folds(data, config.folds, config.fold_seed)?;
    let base = FitConfig {
        init: Init::Random,
        ..config.fit.clone()
    };
    let mut cv_error = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    let mut rank_cv = Vec::with_capacity(grid.len());
    let mut rank_refit = Vec::with_capacity(grid.len());
    let mut log = Vec::new();
    let mut last_fits = Vec::with_capacity(grid.len());
    let mut refits: Vec<Option<ModelFit>> = Vec::with_capacity(grid.len());

    for &lambda in &grid {
        let out = cv_error_with_mode(data, &folds, lambda, &base, config.mode)?;
        log::info!(
            "lambda {lambda:.4e}: cv error {:.6} (se {:.6}), mean rank {:.1}",
            out.mean,
            out.se,
            out.mean_rank()
        );
        cv_error.push(out.mean);
        cv_se.push(out.se);
        rank_cv.push(out.mean_rank());
        log.extend(out.records.iter().cloned());
        if config.refit_every {
            let fit = refit(data, &base, lambda, &out.last_fit)?;
            on_refit(lambda, &fit);
            rank_refit.push(Some(fit.rank()));
            refits.push(Some(fit));
        } else {
            rank_refit.push(None);
            refits.push(None);
        }
        last_fits.push(out.last_fit);
    }

    let best_index = cv_error
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is not empty");
    let best_lambda = grid[best_index];
    let best_fit = match refits[best_index].take() {
        Some(fit) => fit,
        None => {
            let fit = refit(data, &base, best_lambda, &last_fits[best_index])?;
            on_refit(best_lambda, &fit);
            rank_refit[best_index] = Some(fit.rank());
            fit
        }
    };
    let result = CvResult {
        family: config.fit.penalty.family,
        lambda_grid: grid,
        cv_error,
        cv_se,
        rank_cv,
        rank_refit,
        best_lambda,
        best_index,
        folds: config.folds,
        log,
    };
    Ok((result, best_fit))
}

pub fn lambda_path(data: &CoupledData, config: &PathConfig) -> Result<(CvResult, ModelFit)> {
    lambda_path_with(data, config, |_, _| {})
}

fn refit(data: &CoupledData, base: &FitConfig, lambda: f64, init: &ModelFit) -> Result<ModelFit> {
    let cfg = FitConfig {
        penalty: base.penalty.with_lambda(lambda)?,
        ..base.clone()
    }
    .warm(init);
    fit_gsca(data, &cfg)
}

/// Mean negative log-likelihood of the data under given parameters.
pub fn bayes_error(data: &CoupledData, theta: ArrayView2<'_, f64>, sigma2: f64, link: LinkKind) -> Result<f64> {
    Ok(joint_nll(data, theta, sigma2, link)? / data.n_observed() as f64)
}

/// Penalty spec of `family` at strength `lambda`.
pub fn spec_at(family: PenaltyFamily, lambda: f64) -> Result<PenaltySpec> {
    PenaltySpec::new(family, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn full(rows: usize, j1: usize, j2: usize) -> CoupledData {
        let x1 = Array2::from_shape_fn((rows, j1), |(i, j)| ((i + j) % 2) as f64);
        let x2 = Array2::from_shape_fn((rows, j2), |(i, j)| (i * j) as f64 * 0.1);
        CoupledData::fully_observed(x1, x2).unwrap()
    }

    #[test]
    fn identity_offsets_give_latin_diagonals() {
        let d = full(7, 7, 7);
        let offs: Vec<usize> = (0..7).collect();
        let f = diagonal_folds_with_offsets(&d, 7, &offs, &offs).unwrap();
        for k in 0..7 {
            let (h1, _) = f.held_out(k);
            assert_eq!(h1.iter().filter(|&&h| h).count(), 7);
            for lane in h1.axis_iter(Axis(0)).chain(h1.axis_iter(Axis(1))) {
                assert_eq!(lane.iter().filter(|&&h| h).count(), 1);
            }
            for i in 0..7 {
                for j in 0..7 {
                    assert_eq!(h1[[i, j]], (i + 7 - j) % 7 == k);
                }
            }
        }
    }

    #[test]
    fn two_folds_balanced() {
        let d = full(4, 4, 4);
        let f = diagonal_folds(&d, 2, 1).unwrap();
        let (s1, s2) = f.fold_sizes();
        assert_eq!(s1, vec![8, 8]);
        assert_eq!(s2, vec![8, 8]);
    }

    #[test]
    fn folds_partition_observed_entries() {
        let d = full(13, 9, 11);
        let mut q1 = d.q1().to_owned();
        q1[[3, 2]] = false;
        let d = CoupledData::new(d.x1().to_owned(), d.x2().to_owned(), q1, d.q2().to_owned()).unwrap();
        let f = diagonal_folds(&d, 5, 3).unwrap();
        let all = f.fold_of_entry();
        let mask = d.mask();
        for (fold, &obs) in all.iter().zip(mask.iter()) {
            assert_eq!(fold.is_some(), obs);
        }
        let (s1, s2) = f.fold_sizes();
        assert_eq!(s1.iter().sum::<usize>(), d.n_observed1());
        assert_eq!(s2.iter().sum::<usize>(), d.n_observed2());
        for s in [s1, s2] {
            assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
        assert!(covers_rows_and_columns(&f.fold1) && covers_rows_and_columns(&f.fold2));
    }

    #[test]
    fn rejects_bad_fold_counts() {
        let d = full(4, 2, 2);
        assert!(diagonal_folds(&d, 1, 0).is_err());
        assert!(diagonal_folds(&d, 9, 0).is_err());
    }

    #[test]
    fn lambda_rescaling_examples() {
        assert_eq!(effective_lambda(3.5, 100, 10, 10), 3.5);
        assert!((effective_lambda(7.0, 6, 1, 7) - 6.0).abs() < 1e-15);
        assert_eq!(effective_lambda(4.0, 50, 10, 10), 2.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(100.0, 1.0, 3).unwrap();
        assert!((g[0] - 100.0).abs() < 1e-12 && (g[1] - 10.0).abs() < 1e-12 && (g[2] - 1.0).abs() < 1e-12);
        assert_eq!(log_grid(5.0, 1.0, 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn se_of_constant_is_zero() {
        let (m, se) = mean_and_se(&[2.0, 2.0, 2.0]);
        assert_eq!((m, se), (2.0, 0.0));
        let (m, se) = mean_and_se(&[1.0, f64::INFINITY]);
        assert!(m.is_infinite() && se.is_infinite());
    }
}
