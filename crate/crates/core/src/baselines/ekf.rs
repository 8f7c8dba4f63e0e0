//! Extended Kalman filter and its delay-ignorant navigation wrapper.

use nalgebra::{SMatrix, SVector};

use crate::channel::AcousticPacket;
use crate::filter::{kalman_update, FilterError, KalmanUpdate};
use crate::linalg::symmetrize;
use crate::models::{
    ControlInput, KinematicModel, Matrix9, MeasurementMode, MeasurementModel, NavState, NoiseConfig, ProcessModel,
    Vector9,
};

#[derive(Debug, Clone)]
pub struct Ekf<const N: usize, P: ProcessModel<N>> {
    pub model: P,
    pub x: SVector<f64, N>,
    pub p: SMatrix<f64, N, N>,
}

impl<const N: usize, P: ProcessModel<N>> Ekf<N, P> {
    pub fn new(model: P, x: SVector<f64, N>, p: SMatrix<f64, N, N>) -> Self {
        Self { model, x, p }
    }

    pub fn predict(&mut self, u: &P::Input, dt: f64, q: &SMatrix<f64, N, N>) -> Result<(), FilterError> {
        let f = self.model.transition_jacobian(&self.x, u, dt)?;
        self.x = self.model.normalize(self.model.transition(&self.x, u, dt)?);
        self.p = symmetrize(&(f * self.p * f.transpose() + q));
        Ok(())
    }

    pub fn update<const M: usize, H: MeasurementModel<N, M>>(
        &mut self,
        h: &H,
        z: &SVector<f64, M>,
        r: &SMatrix<f64, M, M>,
    ) -> Result<KalmanUpdate<N, M>, FilterError> {
        let innovation = h.residual(z, &h.predict(&self.x)?);
        let upd = kalman_update(&self.p, &h.jacobian(&self.x)?, r, innovation)?;
        self.x = self.model.normalize(self.x + upd.correction);
        self.p = upd.covariance;
        Ok(upd)
    }
}

/// Fuses every packet as if it described the present step.
#[derive(Debug, Clone)]
pub struct IgnorantEkf {
    pub filter: Ekf<9, KinematicModel>,
    noise: NoiseConfig,
    measurement: MeasurementMode,
    dt: f64,
}

impl IgnorantEkf {
    pub fn new(x0: &NavState, p0: Matrix9, noise: NoiseConfig, measurement: MeasurementMode, dt: f64) -> Self {
        Self { filter: Ekf::new(KinematicModel::default(), x0.to_vector(), p0), noise, measurement, dt }
    }

    pub fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        self.filter.predict(u, self.dt, &self.noise.process)
    }

    pub fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        self.filter.update(&self.measurement, &pkt.payload, &pkt.noise_cov).map(|_| ())
    }

    pub fn state(&self) -> &Vector9 {
        &self.filter.x
    }

    pub fn covariance(&self) -> &Matrix9 {
        &self.filter.p
    }
}
