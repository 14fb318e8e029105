//! Least-squares solves shared by the regression-based models.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("design matrix is rank deficient (column {0})")]
    Singular(usize),
    #[error("need more rows than columns ({rows} rows, {cols} columns)")]
    TooFewRows { rows: usize, cols: usize },
    #[error("design rows have inconsistent lengths")]
    Ragged,
}

/// Relative size below which a column is treated as a linear combination of
/// the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
}

impl OlsFit {
    /// `sqrt(SSR / (n - p))`, or 0 when there are no spare degrees of freedom.
    pub fn residual_sigma(&self) -> f64 {
        let dof = self.residuals.len().saturating_sub(self.coefficients.len());
        if dof == 0 {
            0.0
        } else {
            (self.ssr / dof as f64).sqrt()
        }
    }
}

/// Ordinary least squares through a Householder QR factorisation.
pub fn ols(design: &[Vec<f64>], response: &[f64]) -> Result<OlsFit, LinalgError> {
    let rows = design.len();
    let cols = design.first().map_or(0, Vec::len);
    if design.iter().any(|r| r.len() != cols) || response.len() != rows {
        return Err(LinalgError::Ragged);
    }
    if rows <= cols || cols == 0 {
        return Err(LinalgError::TooFewRows { rows, cols });
    }
    let x = DMatrix::from_fn(rows, cols, |i, j| design[i][j]);
    let y = DVector::from_column_slice(response);

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..cols {
        let norm = x.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(LinalgError::Singular(j));
        }
    }
    let rhs = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(LinalgError::Singular(cols - 1))?;
    let residuals = &y - &x * &beta;
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        ssr: residuals.norm_squared(),
        residuals: residuals.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let design: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 1.0 + 2.0 * i as f64).collect();
        let fit = ols(&design, &y).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.residual_sigma() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let design: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(ols(&design, &y).unwrap_err(), LinalgError::Singular(2));
    }

    #[test]
    fn badly_scaled_columns_are_not_singular() {
        let design: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, 3e4 + 50.0 * (i as f64).sin()]).collect();
        let y: Vec<f64> = design.iter().map(|r| 2.0 + 0.001 * r[1]).collect();
        let fit = ols(&design, &y).unwrap();
        assert!((fit.coefficients[1] - 0.001).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            ols(&[vec![1.0, 2.0]], &[1.0]),
            Err(LinalgError::TooFewRows { .. })
        ));
    }
}
