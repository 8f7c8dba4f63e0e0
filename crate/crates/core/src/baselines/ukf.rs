//! Unscented Kalman filter with `2n + 1` scaled sigma points.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::channel::AcousticPacket;
use crate::filter::FilterError;
use crate::linalg::symmetrize;
use crate::models::{
    ControlInput, KinematicModel, Matrix9, MeasurementMode, MeasurementModel, NavState, NoiseConfig, ProcessModel,
    Vector9,
};

/// Diagonal loading used when the scaled covariance has no Cholesky factor.
pub const SQRT_JITTER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

/// Sigma-point weights for an `n`-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtWeights {
    /// `n + lambda`.
    pub spread: f64,
    pub mean0: f64,
    pub cov0: f64,
    /// Weight of each non-central point, shared by mean and covariance.
    pub rest: f64,
}

impl UtParams {
    pub fn validate(&self, n: usize) -> Result<(), FilterError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FilterError::Config(format!("UT alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.alpha * self.alpha * (n as f64 + self.kappa) > 0.0) {
            return Err(FilterError::Config("UT spread n + lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self, n: usize) -> UtWeights {
        let n = n as f64;
        let lambda = self.alpha * self.alpha * (n + self.kappa) - n;
        let spread = n + lambda;
        UtWeights {
            spread,
            mean0: lambda / spread,
            cov0: lambda / spread + 1.0 - self.alpha * self.alpha + self.beta,
            rest: 0.5 / spread,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ukf<const N: usize, P: ProcessModel<N>> {
    pub model: P,
    pub x: SVector<f64, N>,
    pub p: SMatrix<f64, N, N>,
    pub params: UtParams,
    /// Times the square root needed diagonal loading.
    pub jitter_events: u64,
}

impl<const N: usize, P: ProcessModel<N>> Ukf<N, P> {
    pub fn new(model: P, x: SVector<f64, N>, p: SMatrix<f64, N, N>, params: UtParams) -> Result<Self, FilterError> {
        params.validate(N)?;
        Ok(Self { model, x, p, params, jitter_events: 0 })
    }

    fn sigma_points(&mut self) -> Vec<SVector<f64, N>> {
        let w = self.params.weights(N);
        let scaled = symmetrize(&(self.p * w.spread));
        let l = match scaled.cholesky() {
            Some(c) => c.l(),
            None => {
                self.jitter_events += 1;
                let loaded =
                    scaled + SMatrix::<f64, N, N>::identity() * SQRT_JITTER * scaled.diagonal().amax().max(1.0);
                loaded.cholesky().map(|c| c.l()).unwrap_or_else(SMatrix::zeros)
            }
        };
        let mut pts = Vec::with_capacity(2 * N + 1);
        pts.push(self.x);
        for i in 0..N {
            pts.push(self.model.normalize(self.x + l.column(i)));
        }
        for i in 0..N {
            pts.push(self.model.normalize(self.x - l.column(i)));
        }
        pts
    }

    pub fn predict(&mut self, u: &P::Input, dt: f64, q: &SMatrix<f64, N, N>) -> Result<(), FilterError> {
        let w = self.params.weights(N);
        let pts = self.sigma_points();
        let prop = pts.iter().map(|p| self.model.transition(p, u, dt)).collect::<Result<Vec<_>, _>>()?;
        let center = prop[0];
        let spread: Vec<SVector<f64, N>> = prop[1..].iter().map(|p| self.model.difference(p, &center)).collect();
        let shift: SVector<f64, N> = spread.iter().sum::<SVector<f64, N>>() * w.rest;
        let mean = self.model.normalize(center + shift);
        self.x = mean;
        self.p = symmetrize(&(central_covariance(&spread, &spread, &shift, &shift, &w, &self.params) + q));
        Ok(())
    }

    pub fn update<const M: usize, H: MeasurementModel<N, M>>(
        &mut self,
        h: &H,
        z: &SVector<f64, M>,
        r: &SMatrix<f64, M, M>,
    ) -> Result<(), FilterError> {
        let w = self.params.weights(N);
        let pts = self.sigma_points();
        let zs = pts.iter().map(|p| h.predict(p)).collect::<Result<Vec<_>, _>>()?;
        let dz: Vec<SVector<f64, M>> = zs[1..].iter().map(|zi| h.residual(zi, &zs[0])).collect();
        let dx: Vec<SVector<f64, N>> = pts[1..].iter().map(|p| self.model.difference(p, &self.x)).collect();
        let z_shift: SVector<f64, M> = dz.iter().sum::<SVector<f64, M>>() * w.rest;
        let x_shift: SVector<f64, N> = dx.iter().sum::<SVector<f64, N>>() * w.rest;
        let z_mean = zs[0] + z_shift;
        let s = symmetrize(&(central_covariance(&dz, &dz, &z_shift, &z_shift, &w, &self.params) + r));
        let pxz = central_covariance(&dx, &dz, &x_shift, &z_shift, &w, &self.params);
        let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
        let gain = chol.solve(&pxz.transpose()).transpose();
        let innovation = h.residual(z, &z_mean);
        let x = self.model.normalize(self.x + gain * innovation);
        let p = symmetrize(&(self.p - gain * s * gain.transpose()));
        if !x.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        self.x = x;
        self.p = p;
        Ok(())
    }
}

/// Weighted cross-covariance of the sigma points, written relative to the
/// central point. `a`, `b` hold the non-central offsets from it and `sa`,
/// `sb` the mean offsets. This equals the textbook sum over all points but
/// avoids the large central weight multiplying rounding-sized differences.
fn central_covariance<const R: usize, const C: usize>(
    a: &[SVector<f64, R>],
    b: &[SVector<f64, C>],
    sa: &SVector<f64, R>,
    sb: &SVector<f64, C>,
    w: &UtWeights,
    params: &UtParams,
) -> SMatrix<f64, R, C> {
    let mut acc = SMatrix::<f64, R, C>::zeros();
    for (ai, bi) in a.iter().zip(b) {
        acc += ai * bi.transpose();
    }
    // The covariance weights sum to 2 - alpha^2 + beta; with the offsets
    // taken from the central point the mean shift enters as (beta - alpha^2).
    acc * w.rest + sa * sb.transpose() * (params.beta - params.alpha * params.alpha)
}

/// Delay-ignorant UKF on the navigation model.
#[derive(Debug, Clone)]
pub struct IgnorantUkf {
    pub filter: Ukf<9, KinematicModel>,
    noise: NoiseConfig,
    measurement: MeasurementMode,
    dt: f64,
}

impl IgnorantUkf {
    pub fn new(
        x0: &NavState,
        p0: Matrix9,
        noise: NoiseConfig,
        measurement: MeasurementMode,
        dt: f64,
        params: UtParams,
    ) -> Result<Self, FilterError> {
        Ok(Self { filter: Ukf::new(KinematicModel::default(), x0.to_vector(), p0, params)?, noise, measurement, dt })
    }

    pub fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        self.filter.predict(u, self.dt, &self.noise.process)
    }

    pub fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        self.filter.update(&self.measurement, &pkt.payload, &pkt.noise_cov)
    }

    pub fn state(&self) -> &Vector9 {
        &self.filter.x
    }

    pub fn covariance(&self) -> &Matrix9 {
        &self.filter.p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearModel;
    use nalgebra::{Matrix2, Vector2};

    #[test]
    fn mean_weights_sum_to_one() {
        for (alpha, n) in [(1e-3, 9), (0.5, 3), (1.0, 1)] {
            let w = UtParams { alpha, ..Default::default() }.weights(n);
            assert!((w.mean0 + 2.0 * n as f64 * w.rest - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_range_checked() {
        assert!(UtParams { alpha: 0.0, ..Default::default() }.validate(9).is_err());
        assert!(UtParams { alpha: 1.5, ..Default::default() }.validate(9).is_err());
        assert!(UtParams::default().validate(9).is_ok());
    }

    #[test]
    fn indefinite_covariance_falls_back_to_jitter() {
        let model = LinearModel { transition: Matrix2::identity() };
        let p = Matrix2::new(1.0, 0.0, 0.0, -1e-12);
        let mut f = Ukf::new(model, Vector2::zeros(), p, UtParams::default()).unwrap();
        f.predict(&Vector2::zeros(), 1.0, &Matrix2::identity()).unwrap();
        assert_eq!(f.jitter_events, 1);
        assert!(f.x.iter().chain(f.p.iter()).all(|v| v.is_finite()));
    }
}
