//! Coupled binary / quantitative data with observation masks.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::error::{invalid, shape, GscaError, Result};

/// A binary block `x1` and a quantitative block `x2` measured on the same rows.
///
/// Missingness lives only in the masks: `q1[[i, j]] == false` means `x1[[i, j]]`
/// is missing and its stored value is never read. Hiding more entries (as
/// cross-validation does) therefore only touches the masks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledData {
    x1: Array2<f64>,
    x2: Array2<f64>,
    q1: Array2<bool>,
    q2: Array2<bool>,
}

impl CoupledData {
    pub fn new(x1: Array2<f64>, x2: Array2<f64>, q1: Array2<bool>, q2: Array2<bool>) -> Result<Self> {
        let (i1, j1) = x1.dim();
        let (i2, j2) = x2.dim();
        if i1 != i2 {
            return Err(shape(format!("blocks have {i1} and {i2} rows")));
        }
        if q1.dim() != x1.dim() || q2.dim() != x2.dim() {
            return Err(shape("mask dimensions differ from data dimensions"));
        }
        if i1 < 2 {
            return Err(invalid(format!("need at least 2 rows, got {i1}")));
        }
        if j1 < 1 || j2 < 1 {
            return Err(invalid("each block needs at least one column"));
        }
        for ((idx, &v), &q) in x1.indexed_iter().zip(q1.iter()) {
            if q && v != 0.0 && v != 1.0 {
                return Err(GscaError::InvalidData(format!(
                    "binary entry {idx:?} is {v}, expected 0 or 1"
                )));
            }
        }
        for ((idx, &v), &q) in x2.indexed_iter().zip(q2.iter()) {
            if q && !v.is_finite() {
                return Err(GscaError::InvalidData(format!(
                    "quantitative entry {idx:?} is not finite"
                )));
            }
        }
        Ok(Self { x1, x2, q1, q2 })
    }

    /// Builds data where every entry is observed.
    pub fn fully_observed(x1: Array2<f64>, x2: Array2<f64>) -> Result<Self> {
        let q1 = Array2::from_elem(x1.dim(), true);
        let q2 = Array2::from_elem(x2.dim(), true);
        Self::new(x1, x2, q1, q2)
    }

    /// Builds data from optional cells; `None` marks a missing entry.
    pub fn from_options(x1: &Array2<Option<f64>>, x2: &Array2<Option<f64>>) -> Result<Self> {
        let q1 = x1.mapv(|v| v.is_some());
        let q2 = x2.mapv(|v| v.is_some());
        let v1 = x1.mapv(|v| v.unwrap_or(0.0));
        let v2 = x2.mapv(|v| v.unwrap_or(0.0));
        Self::new(v1, v2, q1, q2)
    }

    pub fn x1(&self) -> ArrayView2<'_, f64> {
        self.x1.view()
    }

    pub fn x2(&self) -> ArrayView2<'_, f64> {
        self.x2.view()
    }

    pub fn q1(&self) -> ArrayView2<'_, bool> {
        self.q1.view()
    }

    pub fn q2(&self) -> ArrayView2<'_, bool> {
        self.q2.view()
    }

    pub fn n_rows(&self) -> usize {
        self.x1.nrows()
    }

    pub fn j1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn j2(&self) -> usize {
        self.x2.ncols()
    }

    /// Total number of columns `J = J1 + J2`.
    pub fn n_cols(&self) -> usize {
        self.j1() + self.j2()
    }

    pub fn n_observed1(&self) -> usize {
        self.q1.iter().filter(|&&q| q).count()
    }

    pub fn n_observed2(&self) -> usize {
        self.q2.iter().filter(|&&q| q).count()
    }

    pub fn n_observed(&self) -> usize {
        self.n_observed1() + self.n_observed2()
    }

    /// The joint mask `Q = [Q1 Q2]`.
    pub fn mask(&self) -> Array2<bool> {
        concatenate(Axis(1), &[self.q1.view(), self.q2.view()]).expect("row counts agree")
    }

    /// Observed value at `(i, j)` of the concatenated matrix, if any.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let j1 = self.j1();
        if j < j1 {
            self.q1[[i, j]].then(|| self.x1[[i, j]])
        } else {
            self.q2[[i, j - j1]].then(|| self.x2[[i, j - j1]])
        }
    }

    /// Copy of the data with additional entries hidden.
    ///
    /// `hide1` / `hide2` flag entries to treat as missing; entries already
    /// missing stay missing.
    pub fn with_hidden(&self, hide1: ArrayView2<'_, bool>, hide2: ArrayView2<'_, bool>) -> Result<Self> {
        if hide1.dim() != self.q1.dim() || hide2.dim() != self.q2.dim() {
            return Err(shape("hide masks do not match data dimensions"));
        }
        let mut out = self.clone();
        out.q1.zip_mut_with(&hide1, |q, &h| *q = *q && !h);
        out.q2.zip_mut_with(&hide2, |q, &h| *q = *q && !h);
        Ok(out)
    }

    /// Keeps only the listed binary columns.
    pub fn select_binary_columns(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(invalid("no binary columns left"));
        }
        Ok(Self {
            x1: self.x1.select(Axis(1), keep),
            x2: self.x2.clone(),
            q1: self.q1.select(Axis(1), keep),
            q2: self.q2.clone(),
        })
    }

    /// Overwrites the stored value of a masked entry. Used to verify that
    /// hidden cells never influence a fit.
    #[doc(hidden)]
    pub fn overwrite_hidden(&mut self, i: usize, j: usize, value: f64) {
        let j1 = self.j1();
        if j < j1 {
            assert!(!self.q1[[i, j]], "entry is observed");
            self.x1[[i, j]] = value;
        } else {
            assert!(!self.q2[[i, j - j1]], "entry is observed");
            self.x2[[i, j - j1]] = value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_binary_observed_value() {
        let x1 = array![[0.0, 2.0], [1.0, 0.0]];
        let x2 = array![[1.0], [2.0]];
        assert!(matches!(
            CoupledData::fully_observed(x1, x2),
            Err(GscaError::InvalidData(_))
        ));
    }

    #[test]
    fn missing_binary_cell_may_hold_anything() {
        let x1 = array![[Some(0.0), None], [Some(1.0), Some(0.0)]];
        let x2 = array![[Some(1.5)], [None]];
        let d = CoupledData::from_options(&x1, &x2).unwrap();
        assert_eq!(d.n_observed(), 4);
        assert_eq!(d.get(0, 1), None);
        assert_eq!(d.get(0, 2), Some(1.5));
        assert_eq!(d.get(1, 2), None);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x1 = Array2::<f64>::zeros((3, 2));
        let x2 = Array2::<f64>::zeros((2, 2));
        assert!(CoupledData::fully_observed(x1, x2).is_err());
        let one_row = CoupledData::fully_observed(Array2::zeros((1, 2)), Array2::zeros((1, 2)));
        assert!(one_row.is_err());
    }

    #[test]
    fn hiding_only_clears_mask() {
        let d = CoupledData::fully_observed(array![[1.0], [0.0]], array![[3.0], [4.0]]).unwrap();
        let h1 = array![[true], [false]];
        let h2 = array![[false], [false]];
        let t = d.with_hidden(h1.view(), h2.view()).unwrap();
        assert_eq!(t.n_observed(), 3);
        assert_eq!(t.x1(), d.x1());
    }
}
