//! Dense SVD / QR helpers and weighted singular value thresholding.

use faer::Mat;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{invalid, GscaError, Result};

/// Thin SVD `M = U diag(s) V^T` with singular values in nonincreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub v: Array2<f64>,
}

fn to_faer(m: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn check_finite(m: ArrayView2<'_, f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix contains non-finite entries"));
    }
    Ok(())
}

pub fn thin_svd(m: ArrayView2<'_, f64>) -> Result<ThinSvd> {
    check_finite(m)?;
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|e| GscaError::Numeric(format!("SVD did not converge: {e:?}")))?;
    let mut u = from_faer(svd.U());
    let mut v = from_faer(svd.V());
    let sv = svd.S().column_vector();
    let mut s: Vec<f64> = (0..sv.nrows()).map(|k| sv[k]).collect();
    if s.windows(2).any(|w| w[0] < w[1]) {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        u = u.select(Axis(1), &order);
        v = v.select(Axis(1), &order);
        s = order.iter().map(|&k| s[k]).collect();
    }
    Ok(ThinSvd { u, s, v })
}

impl ThinSvd {
    /// `U[:, ..r] diag(values[..r]) V[:, ..r]^T`.
    pub fn reconstruct_with(&self, values: &[f64]) -> Array2<f64> {
        let r = values.iter().rposition(|&x| x != 0.0).map_or(0, |p| p + 1);
        let (m, n) = (self.u.nrows(), self.v.nrows());
        if r == 0 {
            return Array2::zeros((m, n));
        }
        let mut us = self.u.slice(s![.., ..r]).to_owned();
        for (k, mut col) in us.axis_iter_mut(Axis(1)).enumerate() {
            col *= values[k];
        }
        us.dot(&self.v.slice(s![.., ..r]).t())
    }
}

/// Result of a spectral shrinkage `Z = left * right^T`.
///
/// `left` holds the orthonormal left singular vectors of the retained
/// components and `right` the matching right singular vectors scaled by the
/// shrunk values.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub matrix: Array2<f64>,
    /// Shrunk values of all `min(m, n)` components, in the order of the
    /// input's singular values.
    pub singular_values: Vec<f64>,
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    /// Indices (into `singular_values`) of the retained components.
    pub kept: Vec<usize>,
}

/// Smaller dimension below which the plain SVD is always used.
const GRAM_MIN_DIM: usize = 32;

/// Applies `shrink(k, s_k)` to the singular values of `m` and rebuilds.
///
/// `shrink` must map into `[0, s_k]`. Strongly rectangular matrices go
/// through the eigendecomposition of the small Gram matrix, which is several
/// times cheaper than a full SVD; the rebuilt matrix is then
/// `U diag(shrunk / s) U^T M`, which never needs the right singular vectors of
/// discarded components.
pub fn spectral_shrink<F>(m: ArrayView2<'_, f64>, shrink: F) -> Result<Thresholded>
where
    F: Fn(usize, f64) -> f64,
{
    check_finite(m)?;
    let (rows, cols) = m.dim();
    let (small, large) = (rows.min(cols), rows.max(cols));
    if small >= GRAM_MIN_DIM && large >= 2 * small {
        gram_shrink(m, shrink)
    } else {
        svd_shrink(m, shrink)
    }
}

fn shrunk_values<F: Fn(usize, f64) -> f64>(s: &[f64], shrink: F) -> Vec<f64> {
    s.iter()
        .enumerate()
        .map(|(k, &x)| shrink(k, x).clamp(0.0, x.max(0.0)))
        .collect()
}

pub(crate) fn svd_shrink<F: Fn(usize, f64) -> f64>(m: ArrayView2<'_, f64>, shrink: F) -> Result<Thresholded> {
    let svd = thin_svd(m)?;
    let values = shrunk_values(&svd.s, shrink);
    let kept: Vec<usize> = (0..values.len()).filter(|&k| values[k] > 0.0).collect();
    let left = svd.u.select(Axis(1), &kept);
    let mut right = svd.v.select(Axis(1), &kept);
    for (c, mut col) in right.axis_iter_mut(Axis(1)).enumerate() {
        col *= values[kept[c]];
    }
    Ok(Thresholded {
        matrix: left.dot(&right.t()),
        singular_values: values,
        left,
        right,
        kept,
    })
}

pub(crate) fn gram_shrink<F: Fn(usize, f64) -> f64>(m: ArrayView2<'_, f64>, shrink: F) -> Result<Thresholded> {
    let wide = m.nrows() <= m.ncols();
    // work with the orientation that has fewer rows
    let mf = if wide { to_faer(m) } else { to_faer(m.t()) };
    let gram = &mf * mf.transpose();
    let eig = gram
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| GscaError::Numeric(format!("eigendecomposition failed: {e:?}")))?;
    let n = gram.nrows();
    let ev = eig.S().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ev[b].total_cmp(&ev[a]));
    let s: Vec<f64> = order.iter().map(|&k| ev[k].max(0.0).sqrt()).collect();
    let values = shrunk_values(&s, shrink);
    let kept: Vec<usize> = (0..n).filter(|&k| values[k] > 0.0 && s[k] > 0.0).collect();

    let vecs = eig.U();
    let basis = Mat::<f64>::from_fn(n, kept.len(), |i, c| vecs[(i, order[kept[c]])]);
    // columns: M^T u_k * (shrunk_k / s_k) = v_k * shrunk_k
    let mut scaled = mf.transpose() * &basis;
    for (c, &k) in kept.iter().enumerate() {
        let f = values[k] / s[k];
        for i in 0..scaled.nrows() {
            scaled[(i, c)] *= f;
        }
    }
    let basis = from_faer(basis.as_ref());
    let scaled = from_faer(scaled.as_ref());
    let (left, right) = if wide { (basis, scaled) } else { (scaled_to_unit(&scaled, &kept, &values), basis_times(&basis, &kept, &values)) };
    let matrix = left.dot(&right.t());
    Ok(Thresholded {
        matrix,
        singular_values: values,
        left,
        right,
        kept,
    })
}

/// Tall case: `scaled` holds `u_k * shrunk_k`; normalize to unit columns.
fn scaled_to_unit(scaled: &Array2<f64>, kept: &[usize], values: &[f64]) -> Array2<f64> {
    let mut out = scaled.clone();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col /= values[kept[c]];
    }
    out
}

/// Tall case: right factor `v_k * shrunk_k` from the eigenvectors `v_k`.
fn basis_times(basis: &Array2<f64>, kept: &[usize], values: &[f64]) -> Array2<f64> {
    let mut out = basis.clone();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col *= values[kept[c]];
    }
    out
}

/// Weighted singular value thresholding.
///
/// Returns `U diag((s_r - step * w_r)_+) V^T`. The closed form is the exact
/// proximal map when the weights are nondecreasing in `r`, which holds when
/// they come from a concave penalty evaluated at sorted singular values.
pub fn weighted_svt(m: ArrayView2<'_, f64>, weights: &[f64], step: f64) -> Result<Array2<f64>> {
    Ok(weighted_svt_full(m, weights, step)?.matrix)
}

pub(crate) fn weighted_svt_full(m: ArrayView2<'_, f64>, weights: &[f64], step: f64) -> Result<Thresholded> {
    if !(step >= 0.0) || !step.is_finite() {
        return Err(invalid(format!("step must be finite and >= 0, got {step}")));
    }
    let n = m.nrows().min(m.ncols());
    if weights.len() < n {
        return Err(invalid(format!("{} weights for {n} singular values", weights.len())));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(invalid("weights must be nonnegative"));
    }
    spectral_shrink(m, |k, s| {
        let thr = if step == 0.0 { 0.0 } else { step * weights[k] };
        (s - thr).max(0.0)
    })
}

/// Best rank-`r` approximation and its singular values (zero beyond `r`).
pub fn truncated_svd(m: ArrayView2<'_, f64>, rank: usize) -> Result<Thresholded> {
    spectral_shrink(m, |k, s| if k < rank { s } else { 0.0 })
}

/// Orthonormal basis of the column space of a tall matrix via Householder QR.
///
/// Signs are fixed so that `R` has a nonnegative diagonal, which makes the
/// result a deterministic function of the input.
pub fn orthonormalize(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_finite(m)?;
    let (rows, cols) = m.dim();
    if cols > rows {
        return Err(invalid("orthonormalize needs at least as many rows as columns"));
    }
    let qr = to_faer(m).qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let mut out = from_faer(q.as_ref());
    for k in 0..cols {
        let d = r[(k, k)];
        if d.abs() <= 1e-12 * (rows as f64).sqrt() {
            return Err(GscaError::Numeric("rank-deficient matrix in QR".into()));
        }
        if d < 0.0 {
            out.column_mut(k).mapv_inplace(|x| -x);
        }
    }
    Ok(out)
}

/// Subtracts column means in place and returns them.
pub fn center_columns(m: &mut Array2<f64>) -> Array1<f64> {
    let means = m.mean_axis(Axis(0)).expect("at least one row");
    *m -= &means;
    means
}
