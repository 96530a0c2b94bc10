//! Classification heads over dense feature matrices.

mod gbm;
mod lr;
mod tune;

use alloc::string::String;
use alloc::vec::Vec;

pub use gbm::{gbm_train, GbmModel, GbmParams, Node, Tree};
pub use lr::{lr_train, LogisticObjective, LrModel, LrOptions, Standardizer};
pub use tune::{fit, select_best, tune, HeadKind, HeadSpec, HyperparamGrid, Model, SavedModel, MODEL_FORMAT_VERSION};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_cols: usize) -> Self {
        Matrix { n_rows: 0, n_cols, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, HeadError> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Matrix { n_rows: 0, n_cols, data: Vec::with_capacity(n_cols * rows.len()) };
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), HeadError> {
        if row.len() != self.n_cols {
            return Err(HeadError::Dimension { expected: self.n_cols, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(HeadError::NonFinite);
        }
        self.data.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(|i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn subset(&self, rows: &[usize]) -> Matrix {
        let mut m = Matrix { n_rows: rows.len(), n_cols: self.n_cols, data: Vec::with_capacity(rows.len() * self.n_cols) };
        for &i in rows {
            m.data.extend_from_slice(self.row(i));
        }
        m
    }

    pub fn scale_column(&mut self, j: usize, factor: f64) {
        let n = self.n_cols;
        for v in self.data.iter_mut().skip(j).step_by(n) {
            *v *= factor;
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeadError {
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("labels and rows differ in length ({labels} vs {rows})")]
    Length { labels: usize, rows: usize },
    #[error("feature values must be finite")]
    NonFinite,
    #[error("training needs both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error("unsupported model format version {0}")]
    Version(u32),
}

pub(crate) fn check_training(x: &Matrix, y: &[bool]) -> Result<(), HeadError> {
    if x.n_rows() != y.len() {
        return Err(HeadError::Length { labels: y.len(), rows: x.n_rows() });
    }
    let positives = y.iter().filter(|&&l| l).count();
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(HeadError::SingleClass { positives, negatives });
    }
    Ok(())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Mean logistic loss of probabilities `p` against `y`.
pub fn log_loss(p: &[f64], y: &[bool]) -> f64 {
    let eps = 1e-15;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y {
                -libm::log(p)
            } else {
                -libm::log(1.0 - p)
            }
        })
        .sum();
    total / p.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_basics() {
        let mut m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (3, 2));
        assert_eq!(m.row(1), [3.0, 4.0]);
        assert_eq!(m.subset(&[2, 0]).row(0), [5.0, 6.0]);
        m.scale_column(1, 10.0);
        assert_eq!(m.row(2), [5.0, 60.0]);
        assert!(m.push_row(&[1.0]).is_err());
        assert!(m.push_row(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - libm::log(2.0)).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
