//! Simulation of coupled binary and quantitative data with a known
//! low-rank structure and prescribed latent signal-to-noise ratios.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::data::CoupledData;
use crate::error::{invalid, shape, Result};
use crate::linalg;

/// Variance of the standard logistic distribution.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;

/// How the quantitative-block scale `c2` is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseEnergy {
    /// Use the expected noise energy `I * J2 * sigma2`.
    #[default]
    Expected,
    /// Use the realized `||E2||_F^2`.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub rows: usize,
    pub j1: usize,
    pub j2: usize,
    pub rank: usize,
    pub snr1: f64,
    pub snr2: f64,
    pub sigma2: f64,
    /// Logit-scale column offsets of the binary block.
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub c2_energy: NoiseEnergy,
}

impl SimParams {
    /// Offsets are drawn from the seed: imbalanced binary marginals and
    /// standard normal quantitative means.
    pub fn with_random_offsets(rows: usize, j1: usize, j2: usize, rank: usize, snr: f64, sigma2: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mu1 = imbalanced_binary_offsets(j1, rows, &mut rng).to_vec();
        let mu2: Vec<f64> = (0..j2).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self {
            rows,
            j1,
            j2,
            rank,
            snr1: snr,
            snr2: snr,
            sigma2,
            mu1,
            mu2,
            seed,
            c2_energy: NoiseEnergy::Expected,
        }
    }

    /// 160 x (410 + 1000), rank 10, unit SNRs and noise variance.
    pub fn reference_scale(seed: u64) -> Self {
        Self::with_random_offsets(160, 410, 1000, 10, 1.0, 1.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.j1 < 1 || self.j2 < 1 {
            return Err(invalid("need rows >= 2 and at least one column per block"));
        }
        if self.rank < 1 || self.rank > (self.rows - 1).min(self.j1).min(self.j2) {
            return Err(invalid(format!(
                "rank must be in 1..=min(I-1, J1, J2), got {}",
                self.rank
            )));
        }
        for (name, v) in [("snr1", self.snr1), ("snr2", self.snr2), ("sigma2", self.sigma2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mu1.len() != self.j1 || self.mu2.len() != self.j2 {
            return Err(shape("offset vectors must match block widths"));
        }
        if self.mu1.iter().chain(&self.mu2).any(|v| !v.is_finite()) {
            return Err(invalid("offsets must be finite"));
        }
        Ok(())
    }
}

/// Logits of marginal probabilities drawn from Beta(2, 28) (mean 1/15),
/// clamped to `[1/(2I), 1 - 1/(2I)]`.
pub fn imbalanced_binary_offsets<R: Rng + ?Sized>(j1: usize, rows: usize, rng: &mut R) -> Array1<f64> {
    let beta = Beta::new(2.0, 28.0).expect("valid shape parameters");
    let lo = 1.0 / (2.0 * rows as f64);
    Array1::from_shape_simple_fn(j1, || {
        let p: f64 = beta.sample(rng);
        logit(p.clamp(lo, 1.0 - lo))
    })
}

/// Logits of given marginal probabilities with the same clamp.
pub fn offsets_from_marginals(marginals: &[f64], rows: usize) -> Result<Vec<f64>> {
    let lo = 1.0 / (2.0 * rows as f64);
    marginals
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                Err(invalid(format!("marginal probability {p} outside [0, 1]")))
            } else {
                Ok(logit(p.clamp(lo, 1.0 - lo)))
            }
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Everything generated by [`simulate_coupled`].
#[derive(Debug, Clone)]
pub struct SimGroundTruth {
    pub params: SimParams,
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
    /// Latent quantitative matrix `theta1 + E1` behind the binary block.
    pub x1_star: Array2<f64>,
    pub theta1: Array2<f64>,
    pub theta2: Array2<f64>,
    /// Column offsets after absorbing the column means of `Z`.
    pub mu: Array1<f64>,
    /// Column-centered low-rank part, `I x (J1 + J2)`.
    pub z: Array2<f64>,
    pub e1: Array2<f64>,
    pub e2: Array2<f64>,
    pub u: Array2<f64>,
    pub v1: Array2<f64>,
    pub v2: Array2<f64>,
    pub d: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub snr1_realized: f64,
    pub snr2_realized: f64,
}

impl SimGroundTruth {
    pub fn rows(&self) -> usize {
        self.x1.nrows()
    }

    pub fn j1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn d1(&self) -> Vec<f64> {
        self.d.iter().map(|v| v * self.c1).collect()
    }

    pub fn d2(&self) -> Vec<f64> {
        self.d.iter().map(|v| v * self.c2).collect()
    }

    /// `[theta1 theta2]`.
    pub fn theta(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.theta1.view(), self.theta2.view()]).expect("row counts agree")
    }

    /// Noise `[E1 E2]` on the latent scale.
    pub fn noise(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.e1.view(), self.e2.view()]).expect("row counts agree")
    }

    pub fn data(&self) -> CoupledData {
        CoupledData::fully_observed(self.x1.clone(), self.x2.clone()).expect("simulated data are valid")
    }

    /// Restricts every binary-block quantity to the listed columns.
    ///
    /// The generating factors `u`, `v1`, `d` are kept as drawn.
    pub fn retain_binary_columns(&self, keep: &[usize]) -> Result<Self> {
        let j1 = self.j1();
        if keep.is_empty() || keep.iter().any(|&k| k >= j1) {
            return Err(invalid("binary column selection out of range"));
        }
        let cols: Vec<usize> = keep.iter().copied().chain(j1..self.z.ncols()).collect();
        let mut out = self.clone();
        out.x1 = self.x1.select(Axis(1), keep);
        out.x1_star = self.x1_star.select(Axis(1), keep);
        out.theta1 = self.theta1.select(Axis(1), keep);
        out.e1 = self.e1.select(Axis(1), keep);
        out.mu = self.mu.select(Axis(0), &cols);
        out.z = self.z.select(Axis(1), &cols);
        out.params.mu1 = keep.iter().map(|&k| self.params.mu1[k]).collect();
        out.params.j1 = keep.len();
        Ok(out)
    }
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn orthonormal_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    loop {
        let m = standard_normal_matrix(rng, rows, cols);
        if let Ok(q) = linalg::orthonormalize(m.view()) {
            return q;
        }
    }
}

fn frob2(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn scaled_product(u: &Array2<f64>, d: &[f64], v: &Array2<f64>) -> Array2<f64> {
    let mut ud = u.clone();
    for (k, mut col) in ud.axis_iter_mut(Axis(1)).enumerate() {
        col *= d[k];
    }
    ud.dot(&v.t())
}

/// Draws one coupled data set and its ground truth from `params`.
///
/// Draw order from the seeded stream: `U`, `V1`, `V2`, `D`, `E1`, `E2`. The
/// binary block is the sign pattern of the latent `theta1 + E1` with standard
/// logistic `E1`, which is exactly Bernoulli with probability `phi(theta1)`.
pub fn simulate_coupled(params: &SimParams) -> Result<SimGroundTruth> {
    params.validate()?;
    let (rows, j1, j2, r) = (params.rows, params.j1, params.j2, params.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let u = orthonormal_factor(&mut rng, rows, r);
    let v1 = orthonormal_factor(&mut rng, j1, r);
    let v2 = orthonormal_factor(&mut rng, j2, r);
    let mut d: Vec<f64> = (0..r)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x.abs()
        })
        .collect();
    d.sort_by(|a, b| b.total_cmp(a));

    let e1 = Array2::from_shape_simple_fn((rows, j1), || {
        let p: f64 = rng.gen_range(f64::EPSILON..1.0);
        logit(p)
    });
    let normal = Normal::new(0.0, params.sigma2.sqrt()).expect("positive variance");
    let e2 = Array2::from_shape_simple_fn((rows, j2), || normal.sample(&mut rng));

    // ||U c D V^T||_F^2 = c^2 ||D||^2 for orthonormal U, V
    let d_energy: f64 = d.iter().map(|v| v * v).sum();
    let noise1 = (rows * j1) as f64 * LOGISTIC_VARIANCE;
    let noise2 = match params.c2_energy {
        NoiseEnergy::Expected => (rows * j2) as f64 * params.sigma2,
        NoiseEnergy::Realized => frob2(e2.view()),
    };
    let c1 = (params.snr1 * noise1 / d_energy).sqrt();
    let c2 = (params.snr2 * noise2 / d_energy).sqrt();

    let d1: Vec<f64> = d.iter().map(|v| v * c1).collect();
    let d2: Vec<f64> = d.iter().map(|v| v * c2).collect();
    let ab1 = scaled_product(&u, &d1, &v1);
    let ab2 = scaled_product(&u, &d2, &v2);
    let snr1_realized = frob2(ab1.view()) / frob2(e1.view());
    let snr2_realized = frob2(ab2.view()) / frob2(e2.view());

    let mu1 = Array1::from_vec(params.mu1.clone());
    let mu2 = Array1::from_vec(params.mu2.clone());
    let theta1 = &ab1 + &mu1;
    let theta2 = &ab2 + &mu2;
    let x1_star = &theta1 + &e1;
    let x1 = x1_star.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let x2 = &theta2 + &e2;

    let mut z = concatenate(Axis(1), &[ab1.view(), ab2.view()]).expect("row counts agree");
    let offset = linalg::center_columns(&mut z);
    let mut mu = concatenate(Axis(0), &[mu1.view(), mu2.view()]).expect("1-d");
    mu += &offset;

    Ok(SimGroundTruth {
        params: params.clone(),
        x1,
        x2,
        x1_star,
        theta1,
        theta2,
        mu,
        z,
        e1,
        e2,
        u,
        v1,
        v2,
        d,
        c1,
        c2,
        snr1_realized,
        snr2_realized,
    })
}

/// Removes binary columns whose observed entries are all equal.
///
/// Returns the reduced block, its mask, and the original indices of the
/// kept columns.
pub fn drop_uninformative_binary_columns(
    x1: ArrayView2<'_, f64>,
    q1: ArrayView2<'_, bool>,
) -> Result<(Array2<f64>, Array2<bool>, Vec<usize>)> {
    if x1.dim() != q1.dim() {
        return Err(shape("binary block and mask differ in shape"));
    }
    let keep: Vec<usize> = (0..x1.ncols())
        .filter(|&j| {
            let col = x1.column(j);
            let mask = q1.column(j);
            let mut seen = col.iter().zip(mask.iter()).filter(|(_, &q)| q).map(|(&v, _)| v);
            match seen.next() {
                Some(first) => seen.any(|v| v != first),
                None => false,
            }
        })
        .collect();
    Ok((x1.select(Axis(1), &keep), q1.select(Axis(1), &keep), keep))
}

/// Estimates from a rank-`R` PCA of the column-centered `[X1* X2]`.
#[derive(Debug, Clone)]
pub struct FullInformationFit {
    pub theta: Array2<f64>,
    pub mu: Array1<f64>,
    pub z: Array2<f64>,
    pub singular_values: Vec<f64>,
}

/// The least-squares baseline with access to the latent binary matrix.
pub fn sca_full_information<'a>(x1_star: ArrayView2<'a, f64>, x2: ArrayView2<'a, f64>, rank: usize) -> Result<FullInformationFit> {
    if x1_star.nrows() != x2.nrows() {
        return Err(shape("blocks have different row counts"));
    }
    let mut x = concatenate(Axis(1), &[x1_star, x2]).expect("row counts agree");
    let mu = linalg::center_columns(&mut x);
    let limit = x.nrows().min(x.ncols());
    if rank > limit {
        return Err(invalid(format!("rank {rank} exceeds {limit}")));
    }
    let t = linalg::truncated_svd(x.view(), rank)?;
    let theta = &t.matrix + &mu;
    Ok(FullInformationFit {
        theta,
        mu,
        z: t.matrix,
        singular_values: t.singular_values,
    })
}

/// Splits a concatenated matrix into its binary and quantitative column blocks.
pub fn split_blocks(m: ArrayView2<'_, f64>, j1: usize) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
    (m.slice_move(s![.., ..j1]), m.slice_move(s![.., j1..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small(seed: u64) -> SimParams {
        SimParams::with_random_offsets(30, 12, 20, 3, 1.0, 1.0, seed)
    }

    fn assert_orthonormal(m: &Array2<f64>) {
        let g = m.t().dot(m);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn invariants_hold() {
        let t = simulate_coupled(&small(1)).unwrap();
        assert_orthonormal(&t.u);
        assert_orthonormal(&t.v1);
        assert_orthonormal(&t.v2);
        assert!(t.d.iter().all(|&v| v > 0.0));
        assert!(t.d.windows(2).all(|w| w[0] >= w[1]));
        for s in t.z.sum_axis(Axis(0)) {
            assert!(s.abs() < 1e-8);
        }
        assert!(t.x1.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn deflation_keeps_theta() {
        let t = simulate_coupled(&small(2)).unwrap();
        let rebuilt = &t.z + &t.mu;
        let theta = t.theta();
        assert!((&rebuilt - &theta).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn equal_snrs_give_proportional_spectra() {
        let t = simulate_coupled(&small(3)).unwrap();
        for (a, b) in t.d1().iter().zip(t.d2()) {
            assert_abs_diff_eq!(a / b, t.c1 / t.c2, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let a = simulate_coupled(&small(4)).unwrap();
        let b = simulate_coupled(&small(4)).unwrap();
        assert_eq!(a.x1, b.x1);
        assert_eq!(a.x2, b.x2);
        assert_eq!(a.z, b.z);
        let c = simulate_coupled(&small(5)).unwrap();
        assert_ne!(a.x2, c.x2);
    }

    #[test]
    fn balanced_marginals_without_signal() {
        let mut p = SimParams::with_random_offsets(200, 100, 5, 1, 1e-12, 1.0, 6);
        p.mu1 = vec![0.0; 100];
        let t = simulate_coupled(&p).unwrap();
        let n = t.x1.len() as f64;
        let mean = t.x1.sum() / n;
        let bound = 3.0 * (0.25 / n).sqrt();
        assert!((mean - 0.5).abs() < bound, "mean {mean}");
    }

    #[test]
    fn logistic_noise_energy_matches_expectation() {
        // Monte Carlo check of the logistic variance used for c1
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let p: f64 = rng.gen_range(f64::EPSILON..1.0);
            let e = logit(p);
            sum += e;
            sum2 += e * e;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        assert!((var / LOGISTIC_VARIANCE - 1.0).abs() < 0.01, "variance {var}");
        let expected = 160.0 * 410.0 * LOGISTIC_VARIANCE;
        assert_abs_diff_eq!(expected, 65_600.0 * PI * PI / 3.0, epsilon = 1e-9);
        assert!((expected / 215_855.0 - 1.0).abs() < 1e-3, "{expected}");
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = small(1);
        p.snr1 = 0.0;
        assert!(simulate_coupled(&p).is_err());
        let mut p = small(1);
        p.rank = 13;
        assert!(simulate_coupled(&p).is_err());
        let mut p = small(1);
        p.mu2.pop();
        assert!(simulate_coupled(&p).is_err());
    }

    #[test]
    fn drops_constant_columns() {
        let x1 = array![[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]];
        let q1 = Array2::from_elem((3, 3), true);
        let (kept_x, kept_q, idx) = drop_uninformative_binary_columns(x1.view(), q1.view()).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(kept_x.dim(), (3, 1));
        assert_eq!(kept_q.dim(), (3, 1));
    }

    #[test]
    fn constant_over_observed_entries_counts_as_constant() {
        let x1 = array![[0.0, 1.0], [1.0, 1.0]];
        let q1 = array![[false, true], [true, true]];
        let (_, _, idx) = drop_uninformative_binary_columns(x1.view(), q1.view()).unwrap();
        assert!(idx.is_empty());
    }

    #[test]
    fn full_information_recovers_noise_free_structure() {
        let t = simulate_coupled(&small(7)).unwrap();
        let fit = sca_full_information(t.theta1.view(), t.theta2.view(), 3).unwrap();
        let err: f64 = (&fit.z - &t.z).iter().map(|d| d * d).sum::<f64>() / frob2(t.z.view());
        assert!(err < 1e-10, "{err}");

        let zero = sca_full_information(t.x1_star.view(), t.x2.view(), 0).unwrap();
        assert!(zero.z.iter().all(|&v| v == 0.0));
        let means = concatenate(Axis(1), &[t.x1_star.view(), t.x2.view()]).unwrap().mean_axis(Axis(0)).unwrap();
        assert!((&zero.mu - &means).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn marginal_clamp() {
        let offs = offsets_from_marginals(&[0.0, 0.5, 1.0], 10).unwrap();
        assert_abs_diff_eq!(offs[0], logit(0.05), epsilon = 1e-12);
        assert_abs_diff_eq!(offs[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(offs[2], logit(0.95), epsilon = 1e-12);
        assert!(offsets_from_marginals(&[1.5], 10).is_err());
    }
}
