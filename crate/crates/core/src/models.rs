//! 6-DOF kinematic transition, observation models and their Jacobians.
//!
//! The navigation state is ordered as
//! ```text
//! x = [x, y, z, u, v, w, phi, theta, psi]
//! ```
//! with position in the NED frame, linear velocity in the body frame and
//! ZYX Euler attitude. Everything here is a pure function of its inputs.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Index of the first position component.
pub const POS: usize = 0;
/// Index of the first body-velocity component.
pub const VEL: usize = 3;
/// Index of the first attitude component.
pub const ATT: usize = 6;

/// Pitch magnitude at which the Euler parameterisation is rejected.
pub const GIMBAL_LIMIT: f64 = FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ModelError {
    #[error("pitch {pitch} rad is within 1e-6 of +-pi/2 (gimbal lock)")]
    GimbalLock { pitch: f64 },
    #[error("bearing undefined: zero horizontal separation from the reference")]
    DegenerateBearing,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Navigation state with named blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Vector3<f64>,
}

impl NavState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, attitude: Vector3<f64>) -> Self {
        Self { position, velocity, attitude }
    }

    pub fn from_vector(x: &Vector9) -> Self {
        Self {
            position: x.fixed_rows::<3>(POS).into_owned(),
            velocity: x.fixed_rows::<3>(VEL).into_owned(),
            attitude: x.fixed_rows::<3>(ATT).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector9 {
        let mut x = Vector9::zeros();
        x.fixed_rows_mut::<3>(POS).copy_from(&self.position);
        x.fixed_rows_mut::<3>(VEL).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(ATT).copy_from(&self.attitude);
        x
    }
}

/// Proprioceptive input driving one fast step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Body angular rates (p, q, r), rad/s.
    pub omega_b: Vector3<f64>,
    /// Body linear acceleration, m/s^2. Zero for DVL-driven dead reckoning.
    pub accel_b: Vector3<f64>,
    /// DVL body-velocity sample. When present it replaces the velocity block
    /// before propagation.
    pub dvl: Option<Vector3<f64>>,
}

impl ControlInput {
    pub fn is_finite(&self) -> bool {
        self.omega_b.iter().chain(self.accel_b.iter()).all(|v| v.is_finite())
            && self.dvl.is_none_or(|d| d.iter().all(|v| v.is_finite()))
    }
}

fn check_pitch(attitude: &Vector3<f64>) -> Result<(), ModelError> {
    let pitch = attitude[1];
    if !pitch.is_finite() {
        return Err(ModelError::NonFinite("attitude"));
    }
    if pitch.abs() >= GIMBAL_LIMIT {
        return Err(ModelError::GimbalLock { pitch });
    }
    Ok(())
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-NED rotation for ZYX Euler angles `(phi, theta, psi)`.
pub fn euler_rotation(attitude: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    check_pitch(attitude)?;
    Ok(rot_z(attitude[2]) * rot_y(attitude[1]) * rot_x(attitude[0]))
}

/// Euler-rate transform: maps body rates to `(phi_dot, theta_dot, psi_dot)`.
pub fn attitude_rate(attitude: &Vector3<f64>, omega_b: &Vector3<f64>) -> Result<Vector3<f64>, ModelError> {
    check_pitch(attitude)?;
    let (sp, cp) = attitude[0].sin_cos();
    let (st, ct) = attitude[1].sin_cos();
    let tt = st / ct;
    let (p, q, r) = (omega_b[0], omega_b[1], omega_b[2]);
    Ok(Vector3::new(p + q * sp * tt + r * cp * tt, q * cp - r * sp, (q * sp + r * cp) / ct))
}

/// Forward-Euler kinematic transition `f(x, u)` over `dt` seconds.
///
/// Position advances along the body velocity rotated into NED, body
/// velocity integrates `accel_b`, and attitude integrates the Euler rates
/// (re-wrapped). No noise, residual or DVL substitution is applied here.
pub fn propagate(x: &NavState, u: &ControlInput, dt: f64) -> Result<NavState, ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::InvalidStep(dt));
    }
    let r = euler_rotation(&x.attitude)?;
    let rates = attitude_rate(&x.attitude, &u.omega_b)?;
    let att = x.attitude + rates * dt;
    Ok(NavState {
        position: x.position + r * x.velocity * dt,
        velocity: x.velocity + u.accel_b * dt,
        attitude: Vector3::new(wrap_angle(att[0]), att[1], wrap_angle(att[2])),
    })
}

/// Jacobian of [`propagate`] with respect to the state.
pub fn jacobian_f(x: &NavState, u: &ControlInput, dt: f64) -> Result<Matrix9, ModelError> {
    check_pitch(&x.attitude)?;
    let mut f = Matrix9::identity();
    if dt == 0.0 {
        return Ok(f);
    }
    let (phi, theta, psi) = (x.attitude[0], x.attitude[1], x.attitude[2]);
    let (rx, ry, rz) = (rot_x(phi), rot_y(theta), rot_z(psi));
    let v = x.velocity;

    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(rz * ry * rx * dt));
    f.fixed_view_mut::<3, 1>(POS, ATT).copy_from(&(rz * ry * d_rot_x(phi) * v * dt));
    f.fixed_view_mut::<3, 1>(POS, ATT + 1).copy_from(&(rz * d_rot_y(theta) * rx * v * dt));
    f.fixed_view_mut::<3, 1>(POS, ATT + 2).copy_from(&(d_rot_z(psi) * ry * rx * v * dt));

    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    let (q, r) = (u.omega_b[1], u.omega_b[2]);
    let a = q * sp + r * cp;
    let b = q * cp - r * sp;
    let mut dt_att = Matrix3::zeros();
    dt_att[(0, 0)] = b * tt;
    dt_att[(0, 1)] = a / (ct * ct);
    dt_att[(1, 0)] = -a;
    dt_att[(2, 0)] = b / ct;
    dt_att[(2, 1)] = a * st / (ct * ct);
    let block = Matrix3::identity() + dt_att * dt;
    f.fixed_view_mut::<3, 3>(ATT, ATT).copy_from(&block);
    Ok(f)
}

/// Dynamics interface shared by every estimator.
pub trait ProcessModel<const N: usize> {
    type Input;

    fn transition(&self, x: &SVector<f64, N>, u: &Self::Input, dt: f64) -> Result<SVector<f64, N>, ModelError>;

    fn transition_jacobian(
        &self,
        x: &SVector<f64, N>,
        u: &Self::Input,
        dt: f64,
    ) -> Result<SMatrix<f64, N, N>, ModelError>;

    /// State difference `a - b`, respecting any angular components.
    fn difference(&self, a: &SVector<f64, N>, b: &SVector<f64, N>) -> SVector<f64, N> {
        a - b
    }

    /// Maps a state back onto its canonical range (e.g. wraps angles).
    fn normalize(&self, x: SVector<f64, N>) -> SVector<f64, N> {
        x
    }
}

/// Observation interface: `z = h(x) + v`.
pub trait MeasurementModel<const N: usize, const M: usize> {
    fn predict(&self, x: &SVector<f64, N>) -> Result<SVector<f64, M>, ModelError>;

    fn jacobian(&self, x: &SVector<f64, N>) -> Result<SMatrix<f64, M, N>, ModelError>;

    /// Innovation `z - z_hat`, respecting any angular components.
    fn residual(&self, z: &SVector<f64, M>, z_hat: &SVector<f64, M>) -> SVector<f64, M> {
        z - z_hat
    }
}

/// How the body velocity is obtained during dead reckoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocitySource {
    /// Replace the velocity block by the DVL sample before every step.
    #[default]
    Dvl,
    /// Integrate `accel_b` into the velocity block.
    Accel,
}

/// The 6-DOF kinematic model used by the estimators.
///
/// With [`VelocitySource::Dvl`] the step is `f(x with v := dvl, u)`, so the
/// Jacobian has zero velocity columns and the velocity rows of the process
/// noise carry the DVL uncertainty.
#[derive(Debug, Clone, Copy, Default)]
pub struct KinematicModel {
    pub velocity_source: VelocitySource,
}

impl KinematicModel {
    pub fn new(velocity_source: VelocitySource) -> Self {
        Self { velocity_source }
    }

    fn injected(&self, x: &Vector9, u: &ControlInput) -> NavState {
        let mut s = NavState::from_vector(x);
        if let (VelocitySource::Dvl, Some(dvl)) = (self.velocity_source, u.dvl) {
            s.velocity = dvl;
        }
        s
    }
}

impl ProcessModel<9> for KinematicModel {
    type Input = ControlInput;

    fn transition(&self, x: &Vector9, u: &ControlInput, dt: f64) -> Result<Vector9, ModelError> {
        let next = propagate(&self.injected(x, u), u, dt)?.to_vector();
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(ModelError::NonFinite("state"))
        }
    }

    fn transition_jacobian(&self, x: &Vector9, u: &ControlInput, dt: f64) -> Result<Matrix9, ModelError> {
        let mut f = jacobian_f(&self.injected(x, u), u, dt)?;
        if self.velocity_source == VelocitySource::Dvl && u.dvl.is_some() {
            f.fixed_columns_mut::<3>(VEL).fill(0.0);
        }
        Ok(f)
    }

    fn difference(&self, a: &Vector9, b: &Vector9) -> Vector9 {
        let mut d = a - b;
        d[ATT] = wrap_angle(d[ATT]);
        d[ATT + 2] = wrap_angle(d[ATT + 2]);
        d
    }

    fn normalize(&self, mut x: Vector9) -> Vector9 {
        x[ATT] = wrap_angle(x[ATT]);
        x[ATT + 2] = wrap_angle(x[ATT + 2]);
        x
    }
}

/// Cooperative observation broadcast by the reference vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MeasurementMode {
    /// Absolute NED position `(x, y, z)`.
    #[default]
    Position,
    /// `(3-D range, bearing atan2(dy, dx), depth)` relative to `reference`.
    RangeBearing { reference: Vector3<f64> },
}

/// `h(x)` for the configured mode.
pub fn measure(mode: &MeasurementMode, x: &NavState) -> Result<Vector3<f64>, ModelError> {
    match mode {
        MeasurementMode::Position => Ok(x.position),
        MeasurementMode::RangeBearing { reference } => {
            let rel = x.position - reference;
            let horiz = rel[0].hypot(rel[1]);
            if horiz < 1e-12 {
                return Err(ModelError::DegenerateBearing);
            }
            Ok(Vector3::new(rel.norm(), rel[1].atan2(rel[0]), x.position[2]))
        }
    }
}

/// Jacobian of [`measure`] with respect to the state.
pub fn jacobian_h(mode: &MeasurementMode, x: &NavState) -> Result<SMatrix<f64, 3, 9>, ModelError> {
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    match mode {
        MeasurementMode::Position => {
            h.fixed_view_mut::<3, 3>(0, POS).copy_from(&Matrix3::identity());
        }
        MeasurementMode::RangeBearing { reference } => {
            let rel = x.position - reference;
            let horiz2 = rel[0] * rel[0] + rel[1] * rel[1];
            if horiz2 < 1e-24 {
                return Err(ModelError::DegenerateBearing);
            }
            let range = rel.norm();
            for i in 0..3 {
                h[(0, POS + i)] = rel[i] / range;
            }
            h[(1, POS)] = -rel[1] / horiz2;
            h[(1, POS + 1)] = rel[0] / horiz2;
            h[(2, POS + 2)] = 1.0;
        }
    }
    Ok(h)
}

impl MeasurementModel<9, 3> for MeasurementMode {
    fn predict(&self, x: &Vector9) -> Result<Vector3<f64>, ModelError> {
        measure(self, &NavState::from_vector(x))
    }

    fn jacobian(&self, x: &Vector9) -> Result<SMatrix<f64, 3, 9>, ModelError> {
        jacobian_h(self, &NavState::from_vector(x))
    }

    fn residual(&self, z: &Vector3<f64>, z_hat: &Vector3<f64>) -> Vector3<f64> {
        let mut r = z - z_hat;
        if let MeasurementMode::RangeBearing { .. } = self {
            r[1] = wrap_angle(r[1]);
        }
        r
    }
}

/// Linear time-invariant dynamics `x' = F x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel<const N: usize> {
    pub transition: SMatrix<f64, N, N>,
}

impl<const N: usize> ProcessModel<N> for LinearModel<N> {
    type Input = SVector<f64, N>;

    fn transition(&self, x: &SVector<f64, N>, u: &SVector<f64, N>, _dt: f64) -> Result<SVector<f64, N>, ModelError> {
        Ok(self.transition * x + u)
    }

    fn transition_jacobian(
        &self,
        _x: &SVector<f64, N>,
        _u: &SVector<f64, N>,
        _dt: f64,
    ) -> Result<SMatrix<f64, N, N>, ModelError> {
        Ok(self.transition)
    }
}

/// Linear observation `z = H x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearObservation<const N: usize, const M: usize> {
    pub matrix: SMatrix<f64, M, N>,
}

impl<const N: usize, const M: usize> MeasurementModel<N, M> for LinearObservation<N, M> {
    fn predict(&self, x: &SVector<f64, N>) -> Result<SVector<f64, M>, ModelError> {
        Ok(self.matrix * x)
    }

    fn jacobian(&self, _x: &SVector<f64, N>) -> Result<SMatrix<f64, M, N>, ModelError> {
        Ok(self.matrix)
    }
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub process: Matrix9,
    pub measurement: Matrix3<f64>,
}

impl NoiseConfig {
    pub fn diagonal(process: &Vector9, measurement: &Vector3<f64>) -> Self {
        Self { process: Matrix9::from_diagonal(process), measurement: Matrix3::from_diagonal(measurement) }
    }

    pub fn validate(&self) -> Result<(), crate::linalg::CovarianceError> {
        crate::linalg::check_covariance(&self.process)?;
        crate::linalg::check_covariance(&self.measurement)
    }
}
