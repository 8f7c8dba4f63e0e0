//! Augmented-state EKF: lagged copies of the state ride along in one dense
//! covariance so a delayed measurement can update the copy it refers to.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::channel::AcousticPacket;
use crate::filter::FilterError;
use crate::models::{
    ControlInput, KinematicModel, Matrix9, MeasurementMode, MeasurementModel, NavState, NoiseConfig, ProcessModel,
    Vector9,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugEkfConfig {
    /// Dense-covariance memory budget, bytes.
    pub budget_bytes: u64,
    /// Account for one lag per fast step across the whole delay window.
    pub full_augmentation: bool,
    /// Compute with lags only every this many steps. Lags never referenced by
    /// a measurement do not affect the head estimate, so matching this to the
    /// broadcast schedule reproduces the full filter's head exactly.
    pub clone_every_steps: Option<usize>,
}

impl Default for AugEkfConfig {
    fn default() -> Self {
        Self { budget_bytes: 4 << 30, full_augmentation: true, clone_every_steps: None }
    }
}

/// Bytes of a dense `dim x dim` f64 matrix.
pub fn dense_bytes(dim: usize) -> u64 {
    (dim as u64) * (dim as u64) * 8
}

#[derive(Debug, Clone)]
pub struct AugEkf<const N: usize, P: ProcessModel<N>> {
    model: P,
    /// `[head; lag_0; lag_1; ...]`, lags oldest first.
    x: DVector<f64>,
    p: DMatrix<f64>,
    lags: VecDeque<usize>,
    step: usize,
    window_steps: usize,
    clone_every: usize,
    /// Packets whose lag was already dropped.
    pub rejected: u64,
}

impl<const N: usize, P: ProcessModel<N>> AugEkf<N, P> {
    /// Fails with [`FilterError::ResourceExhausted`] when the projected
    /// augmented covariance exceeds the budget.
    pub fn new(
        model: P,
        x0: SVector<f64, N>,
        p0: SMatrix<f64, N, N>,
        window_steps: usize,
        config: &AugEkfConfig,
    ) -> Result<Self, FilterError> {
        let clone_every = config.clone_every_steps.unwrap_or(1).max(1);
        let accounted_lags = if config.full_augmentation { window_steps + 1 } else { window_steps / clone_every + 1 };
        let required = dense_bytes(N * (accounted_lags + 1));
        if required > config.budget_bytes {
            return Err(FilterError::ResourceExhausted { required_bytes: required, budget_bytes: config.budget_bytes });
        }
        let mut f = Self {
            model,
            x: DVector::from_column_slice(x0.as_slice()),
            p: DMatrix::from_column_slice(N, N, p0.as_slice()),
            lags: VecDeque::new(),
            step: 0,
            window_steps,
            clone_every,
            rejected: 0,
        };
        f.clone_head();
        Ok(f)
    }

    pub fn head(&self) -> SVector<f64, N> {
        SVector::from_column_slice(&self.x.as_slice()[..N])
    }

    pub fn head_covariance(&self) -> SMatrix<f64, N, N> {
        SMatrix::from_fn(|i, j| self.p[(i, j)])
    }

    pub fn dimension(&self) -> usize {
        self.x.len()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    fn clone_head(&mut self) {
        let d = self.x.len();
        let mut x = self.x.clone().resize_vertically(d + N, 0.0);
        x.rows_mut(d, N).copy_from(&self.x.rows(0, N));
        let mut p = self.p.clone().resize(d + N, d + N, 0.0);
        let head_rows = p.view((0, 0), (N, d)).into_owned();
        p.view_mut((d, 0), (N, d)).copy_from(&head_rows);
        p.view_mut((0, d), (d, N)).copy_from(&head_rows.transpose());
        let hh = p.view((0, 0), (N, N)).into_owned();
        p.view_mut((d, d), (N, N)).copy_from(&hh);
        self.x = x;
        self.p = p;
        self.lags.push_back(self.step);
    }

    fn drop_oldest_lag(&mut self) {
        let d = self.x.len();
        let keep: Vec<usize> = (0..N).chain(2 * N..d).collect();
        self.x = self.x.select_rows(&keep);
        self.p = self.p.select_rows(&keep).select_columns(&keep);
        self.lags.pop_front();
    }

    pub fn predict(&mut self, u: &P::Input, dt: f64, q: &SMatrix<f64, N, N>) -> Result<(), FilterError> {
        let head = self.head();
        let f = self.model.transition_jacobian(&head, u, dt)?;
        let next = self.model.normalize(self.model.transition(&head, u, dt)?);
        let d = self.x.len();
        let fd = DMatrix::from_column_slice(N, N, f.as_slice());
        let cross = &fd * self.p.view((0, N), (N, d - N));
        let hh = &fd * self.p.view((0, 0), (N, N)) * fd.transpose() + DMatrix::from_column_slice(N, N, q.as_slice());
        self.p.view_mut((0, N), (N, d - N)).copy_from(&cross);
        self.p.view_mut((N, 0), (d - N, N)).copy_from(&cross.transpose());
        self.p.view_mut((0, 0), (N, N)).copy_from(&((&hh + hh.transpose()) * 0.5));
        self.x.rows_mut(0, N).copy_from(&next);
        self.step += 1;
        if self.step.is_multiple_of(self.clone_every) {
            self.clone_head();
        }
        while self.lags.front().is_some_and(|&s| s + self.window_steps < self.step) {
            self.drop_oldest_lag();
        }
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        Ok(())
    }

    /// Updates the lag stamped `gen_step`; returns false if no such lag is held.
    pub fn update<const M: usize, H: MeasurementModel<N, M>>(
        &mut self,
        h: &H,
        gen_step: usize,
        z: &SVector<f64, M>,
        r: &SMatrix<f64, M, M>,
    ) -> Result<bool, FilterError> {
        let Some(idx) = self.lags.iter().position(|&s| s == gen_step) else {
            self.rejected += 1;
            return Ok(false);
        };
        let off = N * (idx + 1);
        let lag = SVector::<f64, N>::from_column_slice(&self.x.as_slice()[off..off + N]);
        let innovation = h.residual(z, &h.predict(&lag)?);
        let jac = h.jacobian(&lag)?;
        let d = self.x.len();
        // P H^T only touches the lag's columns.
        let jd = DMatrix::from_column_slice(M, N, jac.as_slice());
        let pht = self.p.view((0, off), (d, N)) * jd.transpose();
        let s = pht.rows(off, N).transpose() * jd.transpose() + DMatrix::from_column_slice(M, M, r.as_slice());
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.clone().cholesky().ok_or(FilterError::SingularInnovation)?;
        let gain = chol.solve(&pht.transpose()).transpose();
        let corr = &gain * DVector::from_column_slice(innovation.as_slice());
        self.x += corr;
        for b in 0..=self.lags.len() {
            let mut blk = SVector::<f64, N>::from_column_slice(&self.x.as_slice()[N * b..N * (b + 1)]);
            blk = self.model.normalize(blk);
            self.x.rows_mut(N * b, N).copy_from(&blk);
        }
        let reduce = &gain * &s * gain.transpose();
        self.p -= reduce;
        let sym = (&self.p + self.p.transpose()) * 0.5;
        self.p = sym;
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        Ok(true)
    }
}

/// Aug-EKF on the navigation model.
#[derive(Debug, Clone)]
pub struct NavAugEkf {
    pub filter: AugEkf<9, KinematicModel>,
    noise: NoiseConfig,
    measurement: MeasurementMode,
    dt: f64,
}

impl NavAugEkf {
    pub fn new(
        x0: &NavState,
        p0: Matrix9,
        noise: NoiseConfig,
        measurement: MeasurementMode,
        dt: f64,
        max_delay_s: f64,
        config: &AugEkfConfig,
    ) -> Result<Self, FilterError> {
        let window_steps = (max_delay_s / dt - 1e-9).ceil().max(0.0) as usize;
        let filter = AugEkf::new(KinematicModel::default(), x0.to_vector(), p0, window_steps, config)?;
        Ok(Self { filter, noise, measurement, dt })
    }

    pub fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        self.filter.predict(u, self.dt, &self.noise.process)
    }

    pub fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        self.filter.update(&self.measurement, pkt.gen_step, &pkt.payload, &pkt.noise_cov).map(|_| ())
    }

    pub fn state(&self) -> Vector9 {
        self.filter.head()
    }

    pub fn covariance(&self) -> Matrix9 {
        self.filter.head_covariance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearModel, LinearObservation};
    use nalgebra::{Matrix1, Vector1};

    fn nav(max_delay_s: f64) -> Result<NavAugEkf, FilterError> {
        let x0 = NavState::default();
        let noise = NoiseConfig::diagonal(&Vector9::repeat(1e-4), &nalgebra::Vector3::repeat(1.0));
        NavAugEkf::new(
            &x0,
            Matrix9::identity(),
            noise,
            MeasurementMode::Position,
            0.01,
            max_delay_s,
            &AugEkfConfig::default(),
        )
    }

    #[test]
    fn full_window_over_budget_fails_up_front() {
        match nav(30.0) {
            Err(FilterError::ResourceExhausted { required_bytes, budget_bytes }) => {
                assert_eq!(required_bytes, dense_bytes(9 * 3002));
                assert_eq!(budget_bytes, 4 << 30);
            }
            other => panic!("expected exhaustion, got {:?}", other.map(|_| ())),
        }
        assert!(nav(20.0).is_ok());
    }

    #[test]
    fn lags_outside_window_are_dropped_and_late_packets_rejected() {
        let model = LinearModel { transition: Matrix1::new(1.0) };
        let cfg = AugEkfConfig { budget_bytes: u64::MAX, ..Default::default() };
        let mut f = AugEkf::new(model, Vector1::new(0.0), Matrix1::new(1.0), 10, &cfg).unwrap();
        for _ in 0..50 {
            f.predict(&Vector1::new(0.1), 1.0, &Matrix1::new(0.01)).unwrap();
        }
        assert!(f.dimension() <= 12);
        let h = LinearObservation { matrix: Matrix1::new(1.0) };
        assert!(!f.update(&h, 30, &Vector1::new(3.0), &Matrix1::new(1.0)).unwrap());
        assert!(f.update(&h, 45, &Vector1::new(4.5), &Matrix1::new(1.0)).unwrap());
        assert_eq!(f.rejected, 1);
    }
}
