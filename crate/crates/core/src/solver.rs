//! Majorization-minimization fitting of the penalized model.
//!
//! Each iteration majorizes the joint loss at the current natural parameters
//! `theta = 1 mu^T + Z` by an isotropic quadratic with curvature `L`, and the
//! concave spectral penalty by its supergradient line. The surrogate is then
//! minimized in closed form: `mu` is the column mean of the target `H`, `Z` is
//! a weighted singular value thresholding of the column-centered `H`, and
//! `sigma2` is the mean squared residual of the quantitative block.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::CoupledData;
use crate::error::{invalid, shape, GscaError, Result};
use crate::likelihood::{joint_gradient, joint_nll_unchecked, lipschitz_bound, residual_ss, LinkKind};
use crate::linalg::{self, Thresholded};
use crate::penalty::PenaltySpec;

pub const DEFAULT_EPS_F: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_SIGMA2_FLOOR: f64 = 0.05;
/// Singular values at or below this fraction of the largest one count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

/// Starting point of a fit.
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// `Z` entries i.i.d. uniform on [0, 1), `mu = 0`, `sigma2 = 1`.
    #[default]
    Random,
    WarmStart(Box<ModelFit>),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub penalty: PenaltySpec,
    pub link: LinkKind,
    /// Tolerance on the relative decrease of the objective.
    pub eps_f: f64,
    pub max_iter: usize,
    pub sigma2_floor: f64,
    pub seed: u64,
    pub init: Init,
    /// Relative rank tolerance used to read off `rank(Z)`.
    pub rank_tol: f64,
}

impl FitConfig {
    pub fn new(penalty: PenaltySpec) -> Self {
        Self {
            penalty,
            link: LinkKind::Logit,
            eps_f: DEFAULT_EPS_F,
            max_iter: DEFAULT_MAX_ITER,
            sigma2_floor: DEFAULT_SIGMA2_FLOOR,
            seed: 0,
            init: Init::Random,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn with_eps(mut self, eps_f: f64) -> Self {
        self.eps_f = eps_f;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_link(mut self, link: LinkKind) -> Self {
        self.link = link;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn warm(mut self, fit: &ModelFit) -> Self {
        self.init = Init::WarmStart(Box::new(fit.clone()));
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.family.validate()?;
        if !(self.eps_f > 0.0) {
            return Err(invalid(format!("eps_f must be > 0, got {}", self.eps_f)));
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter must be >= 1"));
        }
        if !(self.sigma2_floor >= 0.0) {
            return Err(invalid("sigma2_floor must be >= 0"));
        }
        if !(self.rank_tol >= 0.0) {
            return Err(invalid("rank_tol must be >= 0"));
        }
        Ok(())
    }
}

/// Fitted offsets, low-rank part, noise variance and factor decomposition.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub mu: Array1<f64>,
    pub z: Array2<f64>,
    pub sigma2: f64,
    /// All `min(I, J)` singular values of `z`, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Scores, `A^T A = I * Identity`.
    pub a: Array2<f64>,
    pub b1: Array2<f64>,
    pub b2: Array2<f64>,
    /// Objective value at the starting point followed by one value per iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warned_saturated: bool,
    pub link: LinkKind,
    pub penalty: Option<PenaltySpec>,
    pub exact_rank: Option<usize>,
}

impl ModelFit {
    /// Natural parameters `1 mu^T + Z`.
    pub fn theta(&self) -> Array2<f64> {
        &self.z + &self.mu
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn j1(&self) -> usize {
        self.b1.nrows()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

/// Factor decomposition `Z = A [B1 B2]^T`.
#[derive(Debug, Clone)]
pub struct Factors {
    pub a: Array2<f64>,
    pub b1: Array2<f64>,
    pub b2: Array2<f64>,
    pub singular_values: Vec<f64>,
}

/// `H = theta - (Q ⊙ ∇f) / L`; `grads` must already be masked.
pub fn majorization_target(theta: ArrayView2<'_, f64>, grads: ArrayView2<'_, f64>, lipschitz: f64) -> Result<Array2<f64>> {
    if theta.dim() != grads.dim() {
        return Err(shape("theta and gradient differ in shape"));
    }
    if !(lipschitz > 0.0) {
        return Err(invalid("L must be positive"));
    }
    let inv = 1.0 / lipschitz;
    Ok(Zip::from(&theta).and(&grads).map_collect(|&t, &g| t - inv * g))
}

/// Column means of `H`.
pub fn update_mu(h: ArrayView2<'_, f64>) -> Array1<f64> {
    h.mean_axis(Axis(0)).expect("at least one row")
}

/// Penalized `Z` step: weighted thresholding of the column-centered target.
///
/// The weights are penalty supergradients at the previous singular values,
/// divided by `L`.
pub fn update_z(
    h: ArrayView2<'_, f64>,
    penalty: &PenaltySpec,
    previous_singular_values: &[f64],
    lipschitz: f64,
) -> Result<Array2<f64>> {
    Ok(penalized_z_step(h, penalty, previous_singular_values, lipschitz)?.matrix)
}

fn penalized_z_step(
    h: ArrayView2<'_, f64>,
    penalty: &PenaltySpec,
    previous: &[f64],
    lipschitz: f64,
) -> Result<Thresholded> {
    if !(lipschitz > 0.0) {
        return Err(invalid("L must be positive"));
    }
    let mut centered = h.to_owned();
    linalg::center_columns(&mut centered);
    let weights: Vec<f64> = previous
        .iter()
        .map(|&x| penalty.supergradient_unchecked(x.max(0.0)))
        .collect();
    linalg::weighted_svt_full(centered.view(), &weights, 1.0 / lipschitz)
}

/// Maximum-likelihood noise variance given the current quantitative fit.
pub fn update_sigma2(x2: ArrayView2<'_, f64>, theta2: ArrayView2<'_, f64>, q2: ArrayView2<'_, bool>) -> Result<f64> {
    if x2.dim() != theta2.dim() || x2.dim() != q2.dim() {
        return Err(shape("quantitative block, theta and mask differ in shape"));
    }
    let (ss, n) = residual_ss(x2, theta2, q2);
    if n == 0 {
        return Err(GscaError::InvalidData("no observed quantitative entries".into()));
    }
    Ok(ss / n as f64)
}

/// `Z = U S V^T` split into `A = sqrt(I) U_R` and `B = V_R S_R / sqrt(I)`,
/// keeping the singular values above the absolute tolerance `rank_tol`.
pub fn decompose_z(z: ArrayView2<'_, f64>, j1: usize, rank_tol: f64) -> Result<Factors> {
    if j1 > z.ncols() {
        return Err(shape("j1 exceeds the number of columns"));
    }
    let t = linalg::svd_shrink(z, |_, s| s)?;
    Ok(factors_from(&t, j1, rank_tol))
}

fn factors_from(t: &Thresholded, j1: usize, rank_tol: f64) -> Factors {
    let rows = t.left.nrows();
    let cols: Vec<usize> = (0..t.kept.len())
        .filter(|&c| t.singular_values[t.kept[c]] > rank_tol)
        .collect();
    let root = (rows as f64).sqrt();
    let a = t.left.select(Axis(1), &cols).mapv(|x| x * root);
    let b = t.right.select(Axis(1), &cols).mapv(|x| x / root);
    Factors {
        a,
        b1: b.slice(s![..j1, ..]).to_owned(),
        b2: b.slice(s![j1.., ..]).to_owned(),
        singular_values: t.singular_values.clone(),
    }
}

enum ZStep<'a> {
    Penalized(&'a PenaltySpec),
    ExactRank(usize),
}

/// Fits the penalized model.
pub fn fit_gsca(data: &CoupledData, config: &FitConfig) -> Result<ModelFit> {
    run(data, config, ZStep::Penalized(&config.penalty))
}

/// Fits with an exact rank constraint and no penalty.
pub fn fit_exact_rank(data: &CoupledData, rank: usize, config: &FitConfig) -> Result<ModelFit> {
    let limit = data.n_rows().min(data.n_cols());
    if rank == 0 || rank >= limit {
        return Err(invalid(format!("rank must be in 1..{limit}, got {rank}")));
    }
    run(data, config, ZStep::ExactRank(rank))
}

struct State {
    mu: Array1<f64>,
    z: Array2<f64>,
    sigma2: f64,
    xi: Vec<f64>,
}

fn initial_state(data: &CoupledData, config: &FitConfig) -> Result<State> {
    let (rows, cols) = (data.n_rows(), data.n_cols());
    match &config.init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let z = Array2::from_shape_simple_fn((rows, cols), || rng.gen::<f64>());
            let xi = linalg::thin_svd(z.view())?.s;
            Ok(State { mu: Array1::zeros(cols), z, sigma2: 1.0, xi })
        }
        Init::WarmStart(fit) => {
            if fit.z.dim() != (rows, cols) || fit.mu.len() != cols {
                return Err(shape(format!(
                    "warm start has shape {:?}, data is {:?}",
                    fit.z.dim(),
                    (rows, cols)
                )));
            }
            if !(fit.sigma2 > 0.0) {
                return Err(invalid("warm start has non-positive sigma2"));
            }
            Ok(State {
                mu: fit.mu.clone(),
                z: fit.z.clone(),
                sigma2: fit.sigma2,
                xi: fit.singular_values.clone(),
            })
        }
    }
}

fn objective(data: &CoupledData, theta: ArrayView2<'_, f64>, sigma2: f64, link: LinkKind, step: &ZStep<'_>, xi: &[f64]) -> f64 {
    let f = joint_nll_unchecked(data, theta, sigma2, link);
    match step {
        ZStep::Penalized(p) => f + p.total(xi),
        ZStep::ExactRank(_) => f,
    }
}

fn run(data: &CoupledData, config: &FitConfig, step: ZStep<'_>) -> Result<ModelFit> {
    config.validate()?;
    if data.n_observed2() == 0 {
        return Err(GscaError::InvalidData("no observed quantitative entries".into()));
    }
    let j1 = data.j1();
    let link = config.link;
    let mut st = initial_state(data, config)?;
    let mut theta = &st.z + &st.mu;
    let mut loss = objective(data, theta.view(), st.sigma2, link, &step, &st.xi);
    if !loss.is_finite() {
        return Err(GscaError::Numeric("initial objective is not finite".into()));
    }
    let mut trace = vec![loss];
    let mut last_step: Option<Thresholded> = None;
    let mut converged = false;
    let mut saturated = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let grad = joint_gradient(data, theta.view(), st.sigma2, link)?;
        let lip = lipschitz_bound(link, st.sigma2)?;
        let h = majorization_target(theta.view(), grad.view(), lip)?;
        let mu = update_mu(h.view());
        let next = match step {
            ZStep::Penalized(p) => penalized_z_step(h.view(), p, &st.xi, lip)?,
            ZStep::ExactRank(r) => {
                let centered = &h - &mu;
                linalg::truncated_svd(centered.view(), r)?
            }
        };
        st.mu = mu;
        st.z = next.matrix.clone();
        st.xi = next.singular_values.clone();
        last_step = Some(next);
        theta = &st.z + &st.mu;
        let sigma2 = update_sigma2(data.x2(), theta.slice(s![.., j1..]), data.q2())?;
        if sigma2 < config.sigma2_floor || sigma2 == 0.0 {
            log::info!("sigma2 = {sigma2:.3e} below floor {}: no low-rank solution reached", config.sigma2_floor);
            saturated = true;
            st.sigma2 = sigma2;
            if sigma2 > 0.0 {
                trace.push(objective(data, theta.view(), sigma2, link, &step, &st.xi));
            }
            break;
        }
        st.sigma2 = sigma2;
        let prev = loss;
        loss = objective(data, theta.view(), st.sigma2, link, &step, &st.xi);
        if !loss.is_finite() {
            return Err(GscaError::Numeric(format!("objective became non-finite at iteration {iterations}")));
        }
        trace.push(loss);
        if (prev - loss) / prev.abs() <= config.eps_f {
            converged = true;
            break;
        }
    }
    log::debug!(
        "fit finished after {iterations} iterations (converged: {converged}, saturated: {saturated}), loss {loss}"
    );

    let tol = config.rank_tol * st.xi.first().copied().unwrap_or(0.0);
    let factors = match &last_step {
        Some(t) => factors_from(t, j1, tol),
        None => decompose_z(st.z.view(), j1, tol)?,
    };
    Ok(ModelFit {
        mu: st.mu,
        z: st.z,
        sigma2: st.sigma2,
        singular_values: st.xi,
        a: factors.a,
        b1: factors.b1,
        b2: factors.b2,
        loss_trace: trace,
        iterations,
        converged,
        warned_saturated: saturated,
        link,
        penalty: match step {
            ZStep::Penalized(p) => Some(*p),
            ZStep::ExactRank(_) => None,
        },
        exact_rank: match step {
            ZStep::Penalized(_) => None,
            ZStep::ExactRank(r) => Some(r),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn target_examples() {
        let theta = array![[1.0, 2.0], [3.0, 4.0]];
        let zero = Array2::zeros((2, 2));
        assert_eq!(majorization_target(theta.view(), zero.view(), 1.0).unwrap(), theta);
        let g = array![[2.0, 0.0], [-2.0, 0.0]];
        let h1 = majorization_target(theta.view(), g.view(), 1.0).unwrap();
        let h2 = majorization_target(theta.view(), g.view(), 2.0).unwrap();
        assert_eq!(&theta - &h1, array![[2.0, 0.0], [-2.0, 0.0]]);
        assert_eq!(&theta - &h2, array![[1.0, 0.0], [-1.0, 0.0]]);
        // second column has zero (masked) gradient, so it stays put
        assert_eq!(h1.column(1), theta.column(1));
    }

    #[test]
    fn mu_examples() {
        assert_eq!(update_mu(array![[1.0, 4.0], [1.0, 4.0]].view()), array![1.0, 4.0]);
        assert_eq!(update_mu(array![[1.0], [2.0], [3.0]].view()), array![2.0]);
        assert_eq!(update_mu(array![[1.0, -2.0], [-1.0, 2.0]].view()), array![0.0, 0.0]);
    }

    #[test]
    fn z_step_examples() {
        let h = array![[5.0, 1.0], [-1.0, 3.0], [-4.0, -4.0]];
        let zero = PenaltySpec::nuclear(0.0).unwrap();
        let z = update_z(h.view(), &zero, &[1.0, 1.0], 1.0).unwrap();
        let mut centered = h.clone();
        linalg::center_columns(&mut centered);
        assert!((&z - &centered).iter().all(|d| d.abs() < 1e-10));

        let huge = PenaltySpec::nuclear(1e6).unwrap();
        let z = update_z(h.view(), &huge, &[1.0, 1.0], 1.0).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        // rows (d, -d) keep columns centered; singular values are sqrt(2) * (5, 2)
        let r2 = 2f64.sqrt();
        let h = array![[5.0 / r2, 0.0], [-5.0 / r2, 0.0], [0.0, 2.0 / r2], [0.0, -2.0 / r2]];
        let nuc = PenaltySpec::nuclear(2.0).unwrap();
        let t = penalized_z_step(h.view(), &nuc, &[9.0, 9.0], 1.0).unwrap();
        assert_abs_diff_eq!(t.singular_values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.singular_values[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma2_examples() {
        let all = array![[true, true]];
        assert_eq!(update_sigma2(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view(), all.view()).unwrap(), 0.0);
        assert_eq!(update_sigma2(array![[3.0, 4.0]].view(), array![[1.0, 2.0]].view(), all.view()).unwrap(), 4.0);
        let some = array![[true, false]];
        assert_eq!(update_sigma2(array![[3.0, 2.0]].view(), array![[1.0, 2.0]].view(), some.view()).unwrap(), 4.0);
        let none = array![[false, false]];
        assert!(update_sigma2(array![[3.0, 2.0]].view(), array![[1.0, 2.0]].view(), none.view()).is_err());
    }

    #[test]
    fn decompose_zero_and_rank_one() {
        let z = Array2::<f64>::zeros((4, 3));
        let f = decompose_z(z.view(), 1, 1e-12).unwrap();
        assert_eq!(f.a.ncols(), 0);
        assert_eq!(f.b1.dim(), (1, 0));

        // u has norm sqrt(I) = 2
        let u = array![1.0, -1.0, 1.0, -1.0];
        let v = array![0.5, 2.0, -1.0];
        let z = u.clone().insert_axis(Axis(1)).dot(&v.clone().insert_axis(Axis(0)));
        let f = decompose_z(z.view(), 2, 1e-10).unwrap();
        assert_eq!(f.a.ncols(), 1);
        let sign = f.a[[0, 0]].signum();
        for i in 0..4 {
            assert_abs_diff_eq!(f.a[[i, 0]] * sign, u[i], epsilon = 1e-12);
        }
        let b = ndarray::concatenate(Axis(0), &[f.b1.view(), f.b2.view()]).unwrap();
        assert!((&f.a.dot(&b.t()) - &z).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn config_validation() {
        let p = PenaltySpec::nuclear(1.0).unwrap();
        assert!(FitConfig::new(p).with_eps(0.0).validate().is_err());
        assert!(FitConfig::new(p).with_max_iter(0).validate().is_err());
        let mut c = FitConfig::new(p);
        c.sigma2_floor = -1.0;
        assert!(c.validate().is_err());
    }
}
