//! Small numerical helpers shared by the estimators.

use nalgebra::{DMatrix, SMatrix};
use thiserror::Error;

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative tolerance for the eigenvalue floor, as a fraction of the largest eigenvalue.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovarianceError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, scale {scale:e})")]
    NotSymmetric { asymmetry: f64, scale: f64 },
    #[error("matrix is not positive semi-definite (min eigenvalue {min:e}, max {max:e})")]
    NotPsd { min: f64, max: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// `(P + P^T) / 2`.
pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Verifies symmetry to [`SYMMETRY_TOL`] and numerical PSD to [`PSD_TOL`].
pub fn check_covariance<const N: usize>(p: &SMatrix<f64, N, N>) -> Result<(), CovarianceError> {
    check_covariance_dyn(&DMatrix::from_column_slice(N, N, p.as_slice()))
}

pub fn check_covariance_dyn(p: &DMatrix<f64>) -> Result<(), CovarianceError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CovarianceError::NonFinite);
    }
    let scale = p.abs().max();
    let asymmetry = (p - p.transpose()).abs().max();
    if asymmetry > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(CovarianceError::NotSymmetric { asymmetry, scale });
    }
    if p.nrows() == 0 {
        return Ok(());
    }
    let eig = p.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min < -PSD_TOL * max.abs().max(f64::MIN_POSITIVE) {
        return Err(CovarianceError::NotPsd { min, max });
    }
    Ok(())
}

/// Upper `p`-quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_quantile(dof: usize, p: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).expect("positive degrees of freedom").inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn accepts_identity_and_rejects_indefinite() {
        assert!(check_covariance(&Matrix3::<f64>::identity()).is_ok());
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -0.5, 2.0));
        assert!(matches!(check_covariance(&m), Err(CovarianceError::NotPsd { .. })));
    }

    #[test]
    fn rejects_asymmetry() {
        let mut m = Matrix3::<f64>::identity();
        m[(0, 1)] = 0.1;
        assert!(matches!(check_covariance(&m), Err(CovarianceError::NotSymmetric { .. })));
        assert!(check_covariance(&symmetrize(&m)).is_ok());
    }

    #[test]
    fn chi_square_three_dof() {
        assert!((chi_square_quantile(3, 0.999) - 16.266).abs() < 1e-3);
    }
}
