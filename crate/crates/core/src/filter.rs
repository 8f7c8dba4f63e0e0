//! Kalman update pieces shared by the estimators.

use nalgebra::{SMatrix, SVector};

use crate::buffer::BufferError;
use crate::linalg::symmetrize;
use crate::models::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("estimate became non-finite")]
    NonFinite,
    #[error("augmented state needs {required_bytes} bytes, budget is {budget_bytes}")]
    ResourceExhausted { required_bytes: u64, budget_bytes: u64 },
    #[error("{0}")]
    Config(String),
}

/// Result of one Kalman measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanUpdate<const N: usize, const M: usize> {
    pub gain: SMatrix<f64, N, M>,
    pub correction: SVector<f64, N>,
    pub covariance: SMatrix<f64, N, N>,
    pub innovation: SVector<f64, M>,
    pub innovation_cov: SMatrix<f64, M, M>,
    /// Normalized innovation squared.
    pub nis: f64,
}

/// Gain `P H^T S^-1` by a Cholesky solve, never an explicit inverse, and the
/// Joseph-form posterior covariance.
pub fn kalman_update<const N: usize, const M: usize>(
    p: &SMatrix<f64, N, N>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
    innovation: SVector<f64, M>,
) -> Result<KalmanUpdate<N, M>, FilterError> {
    let s = symmetrize(&(h * p * h.transpose() + r));
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    let hp = h * p;
    let gain = chol.solve(&hp).transpose();
    let nis = innovation.dot(&chol.solve(&innovation));
    let correction = gain * innovation;
    let i_kh = SMatrix::<f64, N, N>::identity() - gain * h;
    let covariance = symmetrize(&(i_kh * p * i_kh.transpose() + gain * r * gain.transpose()));
    if !correction.iter().chain(covariance.iter()).all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite);
    }
    Ok(KalmanUpdate { gain, correction, covariance, innovation, innovation_cov: s, nis })
}
