//! Ground-truth lawnmower trajectories, ocean current and proprioceptive
//! sensor sampling.
//!
//! The survey runs its legs along east/west with the spacing stepped north,
//! so every turn passes through north and the yaw never crosses the +-pi
//! seam. Truth is integrated with the same forward-Euler step as
//! [`models::propagate`](crate::models::propagate), plus the current's NED
//! displacement, so noiseless dead reckoning closes exactly when the current
//! is zero.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::{self, ControlInput, ModelError, NavState};

/// Time variation of the unmodeled current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum CurrentMode {
    #[default]
    Constant,
    /// Horizontal current direction rotates about the down axis with the given period.
    SlowlyRotating { period_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub leg_length: f64,
    pub leg_spacing: f64,
    pub num_legs: usize,
    pub cruise_speed: f64,
    pub depth: f64,
    pub duration: f64,
    pub dt: f64,
    pub current_velocity: [f64; 3],
    pub current_mode: CurrentMode,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            leg_length: 200.0,
            leg_spacing: 20.0,
            num_legs: 3,
            cruise_speed: 1.5,
            depth: 10.0,
            duration: 600.0,
            dt: 0.01,
            current_velocity: [0.2, 0.1, 0.0],
            current_mode: CurrentMode::Constant,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field, reason: reason.into() }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.duration >= self.dt) {
            return Err(invalid("duration", "must be at least one step"));
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed.is_finite()) {
            return Err(invalid("cruise_speed", "must be positive"));
        }
        if !(self.leg_length > 0.0) {
            return Err(invalid("leg_length", "must be positive"));
        }
        if !(self.leg_spacing > 0.0) {
            return Err(invalid("leg_spacing", "must be positive"));
        }
        if !self.depth.is_finite() {
            return Err(invalid("depth", "must be finite"));
        }
        if self.current_velocity.iter().any(|c| !c.is_finite()) {
            return Err(invalid("current_velocity", "must be finite"));
        }
        if let CurrentMode::SlowlyRotating { period_s } = self.current_mode {
            if !(period_s > 0.0) {
                return Err(invalid("current_mode.period_s", "must be positive"));
            }
        }
        Ok(())
    }

    /// Number of fast steps; the truth has one more sample than this.
    pub fn num_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn current_at(&self, time: f64) -> Vector3<f64> {
        let c = Vector3::from(self.current_velocity);
        match self.current_mode {
            CurrentMode::Constant => c,
            CurrentMode::SlowlyRotating { period_s } => {
                let (s, co) = (2.0 * PI * time / period_s).sin_cos();
                Vector3::new(co * c[0] - s * c[1], s * c[0] + co * c[1], c[2])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub step: usize,
    pub time: f64,
    pub state: NavState,
    /// NED current acting over the step that starts at this sample.
    pub current: Vector3<f64>,
    /// Body angular rate commanded over the step that starts here.
    pub omega_b: Vector3<f64>,
    /// Body linear acceleration over the step that starts here.
    pub accel_b: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub samples: Vec<TruthSample>,
    /// Set when the duration ended before every survey leg was flown.
    pub truncated: bool,
}

impl Truth {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.state.position).collect()
    }
}

/// One segment of the commanded path.
#[derive(Debug, Clone, Copy)]
struct Segment {
    steps: usize,
    speed: f64,
    yaw_rate: f64,
}

fn survey_plan(cfg: &ScenarioConfig) -> Vec<Segment> {
    let leg_steps = (cfg.leg_length / (cfg.cruise_speed * cfg.dt)).round().max(1.0) as usize;
    let radius = 0.5 * cfg.leg_spacing;
    let turn_steps = (PI * radius / (cfg.cruise_speed * cfg.dt)).round().max(1.0) as usize;
    let turn_rate = PI / (turn_steps as f64 * cfg.dt);
    let mut plan = Vec::with_capacity(2 * cfg.num_legs);
    for leg in 0..cfg.num_legs {
        plan.push(Segment { steps: leg_steps, speed: cfg.cruise_speed, yaw_rate: 0.0 });
        if leg + 1 < cfg.num_legs {
            // Eastbound legs turn left through north, westbound legs turn right.
            let sign = if leg % 2 == 0 { -1.0 } else { 1.0 };
            plan.push(Segment { steps: turn_steps, speed: cfg.cruise_speed, yaw_rate: sign * turn_rate });
        }
    }
    plan
}

/// Integrates the lawnmower survey.
///
/// The vehicle starts at the origin at `depth`, heading east. After the
/// last leg it keeps transiting on its final heading; with `num_legs == 0` it
/// holds station and only the current moves it.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Truth, ScenarioError> {
    cfg.validate()?;
    let n = cfg.num_steps();
    let plan = survey_plan(cfg);
    let planned: usize = plan.iter().map(|s| s.steps).sum();
    let transit_speed = if cfg.num_legs == 0 { 0.0 } else { cfg.cruise_speed };

    let mut state = NavState::new(
        Vector3::new(0.0, 0.0, cfg.depth),
        Vector3::new(if cfg.num_legs == 0 { 0.0 } else { cfg.cruise_speed }, 0.0, 0.0),
        Vector3::new(0.0, 0.0, FRAC_PI_2),
    );
    let mut segments = plan.iter().flat_map(|s| std::iter::repeat_n(*s, s.steps));
    let mut samples = Vec::with_capacity(n + 1);
    for step in 0..=n {
        let time = step as f64 * cfg.dt;
        let seg = segments.next();
        let (speed, yaw_rate) = seg.map_or((transit_speed, 0.0), |s| (s.speed, s.yaw_rate));
        state.velocity = Vector3::new(speed, 0.0, 0.0);
        let sample = TruthSample {
            step,
            time,
            state,
            current: cfg.current_at(time),
            omega_b: Vector3::new(0.0, 0.0, yaw_rate),
            accel_b: Vector3::zeros(),
        };
        samples.push(sample);
        if step < n {
            let u = ControlInput { omega_b: sample.omega_b, accel_b: sample.accel_b, dvl: None };
            let mut next = models::propagate(&state, &u, cfg.dt)?;
            next.position += sample.current * cfg.dt;
            state = next;
        }
    }
    Ok(Truth { samples, truncated: planned > n })
}

/// Noise characteristics of the proprioceptive sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    /// Hz.
    pub imu_rate: f64,
    /// m/s/sqrt(hr).
    pub accel_random_walk: f64,
    /// deg/sqrt(hr).
    pub gyro_random_walk: f64,
    /// m/s, per axis.
    pub dvl_noise_std: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self { imu_rate: 100.0, accel_random_walk: 0.05, gyro_random_walk: 0.01, dvl_noise_std: 0.05 }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.imu_rate > 0.0 && self.imu_rate.is_finite()) {
            return Err(invalid("imu_rate", "must be positive"));
        }
        for (field, v) in [
            ("accel_random_walk", self.accel_random_walk),
            ("gyro_random_walk", self.gyro_random_walk),
            ("dvl_noise_std", self.dvl_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    /// Per-sample gyro noise std, rad/s.
    pub fn gyro_sample_std(&self) -> f64 {
        self.gyro_random_walk.to_radians() / 60.0 / self.dt().sqrt()
    }

    /// Per-sample accelerometer noise std, m/s^2.
    pub fn accel_sample_std(&self) -> f64 {
        self.accel_random_walk / 60.0 / self.dt().sqrt()
    }
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vector3<f64> {
    Vector3::new(
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
    )
}

/// DVL water-track sample: body velocity through the water plus white noise.
pub fn sample_dvl<R: Rng + ?Sized>(truth: &TruthSample, spec: &SensorSpec, rng: &mut R) -> Vector3<f64> {
    truth.state.velocity + gaussian3(rng, spec.dvl_noise_std)
}

/// Gyro sample with angle random walk.
pub fn sample_gyro<R: Rng + ?Sized>(truth: &TruthSample, spec: &SensorSpec, rng: &mut R) -> Vector3<f64> {
    truth.omega_b + gaussian3(rng, spec.gyro_sample_std())
}

/// Accelerometer sample with velocity random walk.
pub fn sample_accel<R: Rng + ?Sized>(truth: &TruthSample, spec: &SensorSpec, rng: &mut R) -> Vector3<f64> {
    truth.accel_b + gaussian3(rng, spec.accel_sample_std())
}

/// Samples the control input for every step of `truth` except the last.
///
/// Entry `k` drives the step from sample `k` to `k + 1`. Draw order per
/// step is DVL, gyro, accelerometer.
pub fn sample_controls<R: Rng + ?Sized>(truth: &Truth, spec: &SensorSpec, rng: &mut R) -> Vec<ControlInput> {
    let n = truth.samples.len().saturating_sub(1);
    truth.samples[..n]
        .iter()
        .map(|s| {
            let dvl = sample_dvl(s, spec, rng);
            let omega_b = sample_gyro(s, spec, rng);
            let accel_b = sample_accel(s, spec, rng);
            ControlInput { omega_b, accel_b, dvl: Some(dvl) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{KinematicModel, ProcessModel};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight(speed: f64, seconds: f64, current: [f64; 3]) -> ScenarioConfig {
        ScenarioConfig {
            leg_length: speed * seconds,
            num_legs: 1,
            cruise_speed: speed,
            duration: seconds,
            current_velocity: current,
            ..Default::default()
        }
    }

    #[test]
    fn straight_leg_displacement() {
        let truth = generate_truth(&straight(1.0, 10.0, [0.0; 3])).unwrap();
        assert_eq!(truth.samples.len(), 1001);
        let d = truth.samples.last().unwrap().state.position - truth.samples[0].state.position;
        // Heading east.
        assert_abs_diff_eq!(d, Vector3::new(0.0, 10.0, 0.0), epsilon = 1e-9);
        assert!(!truth.truncated);
    }

    #[test]
    fn station_keeping_drifts_with_current() {
        let cfg =
            ScenarioConfig { num_legs: 0, duration: 10.0, current_velocity: [0.2, 0.0, 0.0], ..Default::default() };
        let truth = generate_truth(&cfg).unwrap();
        let d = truth.samples.last().unwrap().state.position - truth.samples[0].state.position;
        assert_abs_diff_eq!(d, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn consecutive_legs_are_antiparallel() {
        let cfg = ScenarioConfig { num_legs: 2, current_velocity: [0.0; 3], ..Default::default() };
        let truth = generate_truth(&cfg).unwrap();
        let leg_steps = (cfg.leg_length / (cfg.cruise_speed * cfg.dt)).round() as usize;
        let turn_steps = (PI * 10.0 / (cfg.cruise_speed * cfg.dt)).round() as usize;
        let psi1 = truth.samples[leg_steps / 2].state.attitude[2];
        let psi2 = truth.samples[leg_steps + turn_steps + leg_steps / 2].state.attitude[2];
        assert_abs_diff_eq!((psi1 - psi2).abs(), PI, epsilon = 1e-9);
        // Second leg sits one spacing north of the first.
        let n2 = truth.samples[leg_steps + turn_steps + 1].state.position[0];
        assert_abs_diff_eq!(n2, cfg.leg_spacing, epsilon = 0.05);
    }

    #[test]
    fn short_duration_is_flagged() {
        let cfg = ScenarioConfig { duration: 100.0, ..Default::default() };
        assert!(generate_truth(&cfg).unwrap().truncated);
        assert!(!generate_truth(&ScenarioConfig::default()).unwrap().truncated);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ScenarioConfig { dt: 0.0, ..Default::default() };
        assert!(generate_truth(&cfg).is_err());
        let cfg = ScenarioConfig { cruise_speed: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noiseless_dead_reckoning_closes_without_current() {
        let cfg = ScenarioConfig { current_velocity: [0.0; 3], ..Default::default() };
        let truth = generate_truth(&cfg).unwrap();
        let spec =
            SensorSpec { accel_random_walk: 0.0, gyro_random_walk: 0.0, dvl_noise_std: 0.0, ..Default::default() };
        let controls = sample_controls(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        let model = KinematicModel::default();
        for (k, u) in controls.iter().enumerate() {
            // One step from truth, so errors do not compound.
            let x = truth.samples[k].state.to_vector();
            let next = model.transition(&x, u, cfg.dt).unwrap();
            let err = model.difference(&next, &truth.samples[k + 1].state.to_vector());
            assert!(err.amax() < 1e-9, "step {k}: {err}");
        }
    }

    #[test]
    fn uncompensated_drift_grows_at_current_speed() {
        let cfg = ScenarioConfig::default();
        let truth = generate_truth(&cfg).unwrap();
        let spec =
            SensorSpec { accel_random_walk: 0.0, gyro_random_walk: 0.0, dvl_noise_std: 0.0, ..Default::default() };
        let controls = sample_controls(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        let model = KinematicModel::default();
        let mut x = truth.samples[0].state.to_vector();
        let speed = Vector3::from(cfg.current_velocity).norm();
        for (k, u) in controls.iter().enumerate() {
            x = model.transition(&x, u, cfg.dt).unwrap();
            if (k + 1) % 10_000 == 0 {
                let t = (k + 1) as f64 * cfg.dt;
                let err = (x.fixed_rows::<3>(0) - truth.samples[k + 1].state.position).norm();
                assert_abs_diff_eq!(err, speed * t, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rotating_current_keeps_magnitude() {
        let cfg =
            ScenarioConfig { current_mode: CurrentMode::SlowlyRotating { period_s: 400.0 }, ..Default::default() };
        let c0 = cfg.current_at(0.0);
        let c1 = cfg.current_at(100.0);
        assert_abs_diff_eq!(c0.norm(), c1.norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(c0.dot(&c1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_sensors_are_exact() {
        let truth = generate_truth(&ScenarioConfig { duration: 5.0, ..Default::default() }).unwrap();
        let spec =
            SensorSpec { accel_random_walk: 0.0, gyro_random_walk: 0.0, dvl_noise_std: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in &truth.samples {
            assert_eq!(sample_dvl(s, &spec, &mut rng), s.state.velocity);
            assert_eq!(sample_gyro(s, &spec, &mut rng), s.omega_b);
            assert_eq!(sample_accel(s, &spec, &mut rng), s.accel_b);
        }
    }

    #[test]
    fn sensor_streams_are_reproducible() {
        let truth = generate_truth(&ScenarioConfig { duration: 5.0, ..Default::default() }).unwrap();
        let spec = SensorSpec::default();
        let a = sample_controls(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_controls(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(11));
        let c = sample_controls(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(12));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dvl_noise_moments() {
        let truth = generate_truth(&ScenarioConfig { duration: 1.0, ..Default::default() }).unwrap();
        let s = truth.samples[0];
        let spec = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let draws: Vec<Vector3<f64>> = (0..n).map(|_| sample_dvl(&s, &spec, &mut rng) - s.state.velocity).collect();
        for axis in 0..3 {
            let mean = draws.iter().map(|d| d[axis]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let std = var.sqrt();
            assert!((0.048..=0.052).contains(&std), "axis {axis}: {std}");
        }
    }

    /// Std across `runs` of the error summed over one hour of zero-truth samples.
    fn integrated_error_std(runs: usize, dt: f64, seed: u64, mut draw: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
        let steps = (3600.0 / dt).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let totals: Vec<f64> = (0..runs).map(|_| (0..steps).map(|_| draw(&mut rng) * dt).sum()).collect();
        let mean = totals.iter().sum::<f64>() / runs as f64;
        (totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
    }

    fn at_rest() -> TruthSample {
        TruthSample {
            step: 0,
            time: 0.0,
            state: NavState::default(),
            current: Vector3::zeros(),
            omega_b: Vector3::zeros(),
            accel_b: Vector3::zeros(),
        }
    }

    #[test]
    fn gyro_random_walk_scaling() {
        let spec = SensorSpec::default();
        let s = at_rest();
        let std_rad = integrated_error_std(200, spec.dt(), 21, |rng| sample_gyro(&s, &spec, rng)[2]);
        let std_deg = std_rad.to_degrees();
        assert!((std_deg - 0.01).abs() <= 0.2 * 0.01, "{std_deg}");
    }

    #[test]
    fn accel_random_walk_scaling() {
        let spec = SensorSpec::default();
        let s = at_rest();
        let std = integrated_error_std(200, spec.dt(), 22, |rng| sample_accel(&s, &spec, rng)[0]);
        assert!((std - 0.05).abs() <= 0.2 * 0.05, "{std}");
    }
}
