//! Matrix-variate time series container.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An ordered sequence of `T` real m×n observation matrices, optionally
/// carrying one label per time point (dates, indices, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPanel {
    data: Vec<DMatrix<f64>>,
    time_labels: Option<Vec<String>>,
}

impl MatrixPanel {
    /// Build a panel from matrices of identical dimensions.
    ///
    /// Requires at least one observation, identical dims throughout and all
    /// entries finite.
    pub fn new(data: Vec<DMatrix<f64>>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidData("panel must contain at least one matrix".into()));
        }
        let (m, n) = (data[0].nrows(), data[0].ncols());
        if m == 0 || n == 0 {
            return Err(Error::InvalidData("panel matrices must be non-empty".into()));
        }
        for (t, x) in data.iter().enumerate() {
            if x.nrows() != m || x.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "observation {t} is {}x{}, expected {m}x{n}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("observation {t} contains a non-finite entry")));
            }
        }
        Ok(Self { data, time_labels: None })
    }

    /// Build a panel with one label per time point.
    pub fn with_labels(data: Vec<DMatrix<f64>>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} observations",
                labels.len(),
                data.len()
            )));
        }
        let mut panel = Self::new(data)?;
        panel.time_labels = Some(labels);
        Ok(panel)
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the panel holds no observations (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) of every observation.
    pub fn dims(&self) -> (usize, usize) {
        (self.data[0].nrows(), self.data[0].ncols())
    }

    /// Observation at 0-based time index `t`.
    pub fn get(&self, t: usize) -> &DMatrix<f64> {
        &self.data[t]
    }

    /// All observations.
    pub fn data(&self) -> &[DMatrix<f64>] {
        &self.data
    }

    /// Optional time labels.
    pub fn time_labels(&self) -> Option<&[String]> {
        self.time_labels.as_deref()
    }

    /// `vec(X_t)` (column-major stacking).
    pub fn vec_at(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(self.data[t].as_slice())
    }

    /// Entrywise demeaned copy (per-entry mean over time removed).
    pub fn demean(&self) -> MatrixPanel {
        let (m, n) = self.dims();
        let tlen = self.len() as f64;
        let mut mean = DMatrix::zeros(m, n);
        for x in &self.data {
            mean += x;
        }
        mean /= tlen;
        let data = self.data.iter().map(|x| x - &mean).collect();
        MatrixPanel { data, time_labels: self.time_labels.clone() }
    }

    /// Contiguous sub-panel over `range` (0-based, half-open).
    pub fn slice(&self, start: usize, end: usize) -> Result<MatrixPanel> {
        if start >= end || end > self.len() {
            return Err(Error::IndexOutOfBounds(format!(
                "slice {start}..{end} of panel with T={}",
                self.len()
            )));
        }
        Ok(MatrixPanel {
            data: self.data[start..end].to_vec(),
            time_labels: self.time_labels.as_ref().map(|l| l[start..end].to_vec()),
        })
    }

    /// Panel of the scalar series at entry (i, j).
    pub fn entry_series(&self, i: usize, j: usize) -> Result<MatrixPanel> {
        let (m, n) = self.dims();
        if i >= m || j >= n {
            return Err(Error::IndexOutOfBounds(format!("entry ({i},{j}) of a {m}x{n} panel")));
        }
        let data = self
            .data
            .iter()
            .map(|x| DMatrix::from_element(1, 1, x[(i, j)]))
            .collect();
        Ok(MatrixPanel { data, time_labels: self.time_labels.clone() })
    }

    /// Panel of `vec(X_t)` as (mn)×1 matrices.
    pub fn vectorized(&self) -> MatrixPanel {
        let (m, n) = self.dims();
        let data = self
            .data
            .iter()
            .map(|x| DMatrix::from_column_slice(m * n, 1, x.as_slice()))
            .collect();
        MatrixPanel { data, time_labels: self.time_labels.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_nonfinite() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::zeros(2, 3);
        assert!(MatrixPanel::new(vec![a.clone(), b]).is_err());
        let mut c = a.clone();
        c[(0, 0)] = f64::NAN;
        assert!(MatrixPanel::new(vec![c]).is_err());
        assert!(MatrixPanel::new(vec![]).is_err());
    }

    #[test]
    fn demean_zeroes_entry_means() {
        let x1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x2 = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1.0, 0.0]);
        let p = MatrixPanel::new(vec![x1, x2]).unwrap().demean();
        let mut sum = DMatrix::zeros(2, 2);
        for t in 0..2 {
            sum += p.get(t);
        }
        assert!(sum.amax() < 1e-15);
    }

    #[test]
    fn entry_series_and_slicing() {
        let x1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x2 = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let p = MatrixPanel::with_labels(vec![x1, x2], vec!["a".into(), "b".into()]).unwrap();
        let s = p.entry_series(1, 0).unwrap();
        assert_eq!(s.dims(), (1, 1));
        assert_eq!(s.get(1)[(0, 0)], 7.0);
        let sl = p.slice(1, 2).unwrap();
        assert_eq!(sl.len(), 1);
        assert_eq!(sl.time_labels().unwrap()[0], "b");
    }
}
