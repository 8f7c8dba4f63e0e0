//! Monte Carlo engine: builds one seeded sensor and packet stream per run,
//! replays it through every estimator in isolation and aggregates RMSE,
//! divergence and per-step timing.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{AugEkfConfig, FgoConfig, FgoNavigator, IgnorantEkf, IgnorantUkf, NavAugEkf, UtParams};
use crate::channel::{simulate_channel, AcousticPacket, ChannelConfig, ChannelError, ChannelTrace};
use crate::filter::FilterError;
use crate::linalg::check_covariance;
use crate::models::{ControlInput, Matrix9, MeasurementMode, NavState, NoiseConfig, Vector9};
use crate::scenario::{generate_truth, sample_controls, ScenarioConfig, ScenarioError, SensorSpec, Truth};
use crate::tskf::{Tskf, TskfConfig};

/// Schema version written in every CSV header comment.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tskf,
    Ekf,
    Ukf,
    AugEkf,
    Fgo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Ekf, Algorithm::Ukf, Algorithm::AugEkf, Algorithm::Fgo, Algorithm::Tskf];

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Tskf => "tskf",
            Algorithm::Ekf => "ekf",
            Algorithm::Ukf => "ukf",
            Algorithm::AugEkf => "aug-ekf",
            Algorithm::Fgo => "fgo",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s.trim())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected one of tskf, ekf, ukf, aug-ekf, fgo)"))
    }
}

/// Filter tuning shared by every estimator. Densities are per second and
/// scaled by the step length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    /// Position random walk, m^2/s.
    pub position_psd: f64,
    /// Velocity noise per step, (m/s)^2.
    pub velocity_var: f64,
    /// Attitude random walk, rad^2/s.
    pub attitude_psd: f64,
    pub initial_position_std: f64,
    pub initial_velocity_std: f64,
    pub initial_attitude_std: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            position_psd: 0.2,
            velocity_var: 2.5e-3,
            attitude_psd: 1e-8,
            initial_position_std: 1.0,
            initial_velocity_std: 0.1,
            initial_attitude_std: 0.01,
        }
    }
}

impl FilterSettings {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("position_psd", self.position_psd),
            ("velocity_var", self.velocity_var),
            ("attitude_psd", self.attitude_psd),
            ("initial_position_std", self.initial_position_std),
            ("initial_velocity_std", self.initial_velocity_std),
            ("initial_attitude_std", self.initial_attitude_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("filter.{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn noise(&self, dt: f64, measurement_std: [f64; 3]) -> NoiseConfig {
        let q = Vector9::from_fn(|i, _| match i {
            0..=2 => self.position_psd * dt,
            3..=5 => self.velocity_var,
            _ => self.attitude_psd * dt,
        });
        NoiseConfig::diagonal(&q, &Vector3::from(measurement_std).map(|s| s * s))
    }

    pub fn initial_covariance(&self) -> Matrix9 {
        Matrix9::from_diagonal(&Vector9::from_fn(|i, _| match i {
            0..=2 => self.initial_position_std.powi(2),
            3..=5 => self.initial_velocity_std.powi(2),
            _ => self.initial_attitude_std.powi(2),
        }))
    }
}

/// Per-algorithm parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSettings {
    pub enabled: Vec<Algorithm>,
    pub tskf: TskfConfig,
    pub ukf: UtParams,
    pub aug_ekf: AugEkfConfig,
    pub fgo: FgoConfig,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        Self {
            enabled: Algorithm::ALL.to_vec(),
            tskf: TskfConfig::default(),
            ukf: UtParams::default(),
            aug_ekf: AugEkfConfig::default(),
            fgo: FgoConfig::default(),
        }
    }
}

/// Delay regime of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayCell {
    /// Every packet takes exactly this long, s.
    Fixed(f64),
    /// Distance-driven delay between the channel floor and ceiling.
    Dynamic,
}

impl DelayCell {
    pub fn channel(&self, base: &ChannelConfig) -> ChannelConfig {
        match *self {
            DelayCell::Fixed(t) => base.clone().with_fixed_delay(t),
            DelayCell::Dynamic => base.clone(),
        }
    }

    /// Value written in the `delay_s` column; the ceiling for dynamic cells.
    pub fn label(&self, base: &ChannelConfig) -> f64 {
        match *self {
            DelayCell::Fixed(t) => t,
            DelayCell::Dynamic => base.delay_ceiling,
        }
    }
}

/// Everything needed to simulate one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub scenario: ScenarioConfig,
    pub sensors: SensorSpec,
    pub channel: ChannelConfig,
    pub measurement: MeasurementMode,
    pub filter: FilterSettings,
    pub algorithms: AlgorithmSettings,
    /// RMSE above this marks a run diverged, m.
    pub divergence_threshold: f64,
}

impl Default for SimulationSetup {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            sensors: SensorSpec::default(),
            channel: ChannelConfig::default(),
            measurement: MeasurementMode::Position,
            filter: FilterSettings::default(),
            algorithms: AlgorithmSettings::default(),
            divergence_threshold: 50.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("{0}")]
    Config(String),
    #[error("trajectory lengths differ: {estimated} estimated vs {truth} truth samples")]
    LengthMismatch { estimated: usize, truth: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Root-mean-square 3-D position error.
pub fn rmse(estimated: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, HarnessError> {
    if estimated.len() != truth.len() {
        return Err(HarnessError::LengthMismatch { estimated: estimated.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = estimated.iter().zip(truth).map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Common interface the harness drives.
pub trait Estimator {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError>;
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError>;
    fn position(&self) -> Vector3<f64>;
    /// Live covariance, when the estimator keeps one.
    fn covariance(&self) -> Option<Matrix9>;
}

fn pos(x: &Vector9) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into_owned()
}

impl Estimator for Tskf {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        self.fast_predict(u)
    }
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        self.on_measurement(pkt).map(|_| ())
    }
    fn position(&self) -> Vector3<f64> {
        pos(&self.current_estimate().0)
    }
    fn covariance(&self) -> Option<Matrix9> {
        Some(*Tskf::covariance(self))
    }
}

impl Estimator for IgnorantEkf {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        IgnorantEkf::predict(self, u)
    }
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        IgnorantEkf::deliver(self, pkt)
    }
    fn position(&self) -> Vector3<f64> {
        pos(self.state())
    }
    fn covariance(&self) -> Option<Matrix9> {
        Some(*IgnorantEkf::covariance(self))
    }
}

impl Estimator for IgnorantUkf {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        IgnorantUkf::predict(self, u)
    }
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        IgnorantUkf::deliver(self, pkt)
    }
    fn position(&self) -> Vector3<f64> {
        pos(self.state())
    }
    fn covariance(&self) -> Option<Matrix9> {
        Some(*IgnorantUkf::covariance(self))
    }
}

impl Estimator for NavAugEkf {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        NavAugEkf::predict(self, u)
    }
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        NavAugEkf::deliver(self, pkt)
    }
    fn position(&self) -> Vector3<f64> {
        pos(&self.state())
    }
    fn covariance(&self) -> Option<Matrix9> {
        Some(NavAugEkf::covariance(self))
    }
}

impl Estimator for FgoNavigator {
    fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        FgoNavigator::predict(self, u)
    }
    fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        FgoNavigator::deliver(self, pkt)
    }
    fn position(&self) -> Vector3<f64> {
        pos(self.state())
    }
    fn covariance(&self) -> Option<Matrix9> {
        None
    }
}

/// Builds an estimator at the initial truth state.
pub fn build_estimator(
    algorithm: Algorithm,
    setup: &SimulationSetup,
    channel: &ChannelConfig,
    x0: &NavState,
) -> Result<Box<dyn Estimator>, FilterError> {
    let dt = setup.scenario.dt;
    let noise = setup.filter.noise(dt, channel.measurement_noise_std);
    let p0 = setup.filter.initial_covariance();
    let mode = setup.measurement;
    let ceiling = channel.delay_ceiling;
    let period_steps = ((channel.broadcast_period / dt).round() as usize).max(1);
    Ok(match algorithm {
        Algorithm::Tskf => {
            let cfg = TskfConfig { max_delay_s: ceiling, ..setup.algorithms.tskf };
            Box::new(Tskf::new(x0, p0, noise, mode, dt, cfg)?)
        }
        Algorithm::Ekf => Box::new(IgnorantEkf::new(x0, p0, noise, mode, dt)),
        Algorithm::Ukf => Box::new(IgnorantUkf::new(x0, p0, noise, mode, dt, setup.algorithms.ukf)?),
        Algorithm::AugEkf => {
            let cfg = AugEkfConfig {
                clone_every_steps: setup.algorithms.aug_ekf.clone_every_steps.or(Some(period_steps)),
                ..setup.algorithms.aug_ekf
            };
            Box::new(NavAugEkf::new(x0, p0, noise, mode, dt, ceiling, &cfg)?)
        }
        Algorithm::Fgo => Box::new(FgoNavigator::new(x0, p0, noise, mode, dt, ceiling, setup.algorithms.fgo)?),
    })
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(master: u64, run: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(run.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SENSOR_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;

/// The shared input streams of one run.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub seed: u64,
    pub truth: Truth,
    pub controls: Vec<ControlInput>,
    pub channel: ChannelConfig,
    pub packets: ChannelTrace,
}

impl RunInputs {
    /// Order-sensitive digest of the control and packet streams.
    pub fn stream_digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100_0000_01b3);
        };
        for u in &self.controls {
            u.omega_b.iter().chain(u.accel_b.iter()).for_each(|v| eat(*v));
            if let Some(d) = u.dvl {
                d.iter().for_each(|v| eat(*v));
            }
        }
        for p in &self.packets.delivered {
            eat(p.gen_step as f64);
            eat(p.delivery_time);
            p.payload.iter().for_each(|v| eat(*v));
        }
        h
    }
}

/// Generates truth, sensor samples and the packet stream for one run.
///
/// The sensor stream depends only on `(master, run)`, so every delay cell of
/// a run sees the same dead-reckoning noise.
pub fn prepare_run(setup: &SimulationSetup, cell: DelayCell, master: u64, run: u64) -> Result<RunInputs, HarnessError> {
    let truth = generate_truth(&setup.scenario)?;
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, run, SENSOR_STREAM));
    let controls = sample_controls(&truth, &setup.sensors, &mut sensor_rng);
    let channel = cell.channel(&setup.channel);
    let mut channel_rng = ChaCha8Rng::seed_from_u64(derive_seed(master ^ channel.seed, run, CHANNEL_STREAM));
    let packets = simulate_channel(&truth, setup.scenario.dt, &channel, &setup.measurement, &mut channel_rng)?;
    Ok(RunInputs { seed: derive_seed(master, run, 0), truth, controls, channel, packets })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelaySummary {
    pub min_s: f64,
    pub mean_s: f64,
    pub max_s: f64,
}

/// Outcome of one algorithm on one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub run: u64,
    pub delay_s: f64,
    /// Distance-driven delay cell rather than a fixed one.
    pub dynamic: bool,
    pub delay: Option<DelaySummary>,
    /// NaN when the run failed.
    pub rmse_m: f64,
    pub step_time_ms_mean: f64,
    pub step_time_ms_p99: f64,
    pub diverged: bool,
    pub failed: bool,
    pub failure: Option<String>,
    /// Steps whose live covariance failed the symmetry or PSD check.
    pub covariance_violations: u64,
}

/// Per-step estimates of one algorithm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateTrace {
    pub positions: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub record_trace: bool,
    /// Verify the live covariance after every step.
    pub check_covariance: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn delay_summary(trace: &ChannelTrace) -> Option<DelaySummary> {
    let d: Vec<f64> = trace.records.iter().filter_map(|r| r.delay_s).collect();
    if d.is_empty() {
        return None;
    }
    Some(DelaySummary {
        min_s: d.iter().copied().fold(f64::INFINITY, f64::min),
        mean_s: d.iter().sum::<f64>() / d.len() as f64,
        max_s: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Replays one run through one estimator, timing every step.
pub fn run_algorithm(
    algorithm: Algorithm,
    setup: &SimulationSetup,
    inputs: &RunInputs,
    run: u64,
    cell: DelayCell,
    options: RunOptions,
) -> (RunMetrics, EstimateTrace) {
    let delay_s = cell.label(&setup.channel);
    let dynamic = cell == DelayCell::Dynamic;
    let mut metrics = RunMetrics {
        algorithm,
        run,
        delay_s,
        dynamic,
        delay: delay_summary(&inputs.packets),
        rmse_m: f64::NAN,
        step_time_ms_mean: f64::NAN,
        step_time_ms_p99: f64::NAN,
        diverged: false,
        failed: false,
        failure: None,
        covariance_violations: 0,
    };
    let mut trace = EstimateTrace::default();
    let x0 = inputs.truth.samples[0].state;
    let mut est = match build_estimator(algorithm, setup, &inputs.channel, &x0) {
        Ok(e) => e,
        Err(e) => {
            metrics.failed = true;
            metrics.failure = Some(e.to_string());
            return (metrics, trace);
        }
    };
    let n = inputs.controls.len();
    let mut times = Vec::with_capacity(n);
    let mut sq_err = (inputs.truth.samples[0].state.position - est.position()).norm_squared();
    if options.record_trace {
        trace.positions.reserve(n + 1);
        trace.positions.push(est.position());
    }
    let packets = &inputs.packets.delivered;
    let mut next = 0;
    for k in 0..n {
        let start = Instant::now();
        let mut result = est.predict(&inputs.controls[k]);
        while result.is_ok() && next < packets.len() && packets[next].delivery_step <= k + 1 {
            result = est.deliver(&packets[next]);
            next += 1;
        }
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if let Err(e) = result {
            metrics.failed = true;
            metrics.failure = Some(e.to_string());
            return (metrics, trace);
        }
        let p = est.position();
        sq_err += (inputs.truth.samples[k + 1].state.position - p).norm_squared();
        if options.record_trace {
            trace.positions.push(p);
        }
        if options.check_covariance {
            if let Some(c) = est.covariance() {
                if check_covariance(&c).is_err() {
                    metrics.covariance_violations += 1;
                }
            }
        }
    }
    let rmse = (sq_err / (n + 1) as f64).sqrt();
    metrics.rmse_m = rmse;
    metrics.diverged = !rmse.is_finite() || rmse > setup.divergence_threshold;
    metrics.step_time_ms_mean = times.iter().sum::<f64>() / n.max(1) as f64;
    times.sort_by(f64::total_cmp);
    metrics.step_time_ms_p99 = percentile(&times, 0.99);
    (metrics, trace)
}

/// Result of every enabled algorithm on one run.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub inputs: RunInputs,
    pub metrics: Vec<RunMetrics>,
    pub traces: Vec<EstimateTrace>,
}

pub fn run_single(
    setup: &SimulationSetup,
    cell: DelayCell,
    master: u64,
    run: u64,
    options: RunOptions,
) -> Result<SingleRun, HarnessError> {
    let inputs = prepare_run(setup, cell, master, run)?;
    let (metrics, traces) =
        setup.algorithms.enabled.iter().map(|a| run_algorithm(*a, setup, &inputs, run, cell, options)).unzip();
    Ok(SingleRun { inputs, metrics, traces })
}

/// Aggregate of one algorithm over one delay cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    pub delay_s: f64,
    pub dynamic: bool,
    pub runs: usize,
    /// Mean over completed runs; NaN when none completed.
    pub rmse_m_mean: f64,
    pub rmse_m_std: f64,
    pub step_time_ms_mean: f64,
    /// Mean over runs of each run's 99th-percentile step time.
    pub step_time_ms_p99: f64,
    /// Fraction of all runs flagged diverged.
    pub diverged_frac: f64,
    pub failed_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub cells: Vec<CellSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
    (m, var.sqrt())
}

pub fn summarize(runs: &[RunMetrics], algorithm: Algorithm, delay_s: f64, dynamic: bool) -> CellSummary {
    let sel: Vec<&RunMetrics> =
        runs.iter().filter(|r| r.algorithm == algorithm && r.delay_s == delay_s && r.dynamic == dynamic).collect();
    let ok: Vec<&RunMetrics> = sel.iter().copied().filter(|r| !r.failed).collect();
    let (rmse_m_mean, rmse_m_std) = mean_std(&ok.iter().map(|r| r.rmse_m).collect::<Vec<_>>());
    let (step_time_ms_mean, _) = mean_std(&ok.iter().map(|r| r.step_time_ms_mean).collect::<Vec<_>>());
    let (step_time_ms_p99, _) = mean_std(&ok.iter().map(|r| r.step_time_ms_p99).collect::<Vec<_>>());
    let n = sel.len().max(1) as f64;
    CellSummary {
        algorithm,
        delay_s,
        dynamic,
        runs: sel.len(),
        rmse_m_mean,
        rmse_m_std,
        step_time_ms_mean,
        step_time_ms_p99,
        diverged_frac: sel.iter().filter(|r| r.diverged).count() as f64 / n,
        failed_frac: sel.iter().filter(|r| r.failed).count() as f64 / n,
    }
}

/// Runs `n_runs` seeded simulations for each cell. `progress` is called after every run.
pub fn run_batch(
    setup: &SimulationSetup,
    cells: &[DelayCell],
    n_runs: usize,
    master_seed: u64,
    mut progress: impl FnMut(DelayCell, usize),
) -> Result<BatchResult, HarnessError> {
    if n_runs == 0 {
        return Err(HarnessError::Config("runs must be at least 1".into()));
    }
    // Cells are interleaved within each run so slow periods on the host
    // affect every cell's timing alike.
    let mut per_cell: Vec<Vec<RunMetrics>> = vec![Vec::new(); cells.len()];
    for r in 0..n_runs as u64 {
        for (i, &cell) in cells.iter().enumerate() {
            let single = run_single(setup, cell, master_seed, r, RunOptions::default())?;
            per_cell[i].extend(single.metrics);
            progress(cell, r as usize + 1);
        }
    }
    let runs: Vec<RunMetrics> = per_cell.into_iter().flatten().collect();
    let mut cells_out = Vec::new();
    for &cell in cells {
        for &a in &setup.algorithms.enabled {
            cells_out.push(summarize(&runs, a, cell.label(&setup.channel), cell == DelayCell::Dynamic));
        }
    }
    Ok(BatchResult {
        master_seed,
        seeds: (0..n_runs as u64).map(|r| derive_seed(master_seed, r, 0)).collect(),
        runs,
        cells: cells_out,
    })
}

fn fmt_num(v: f64, digits: usize) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.digits$}")
    }
}

/// Writes the results table as CSV with a schema comment line.
pub fn write_results_csv<W: Write>(mut w: W, cells: &[CellSummary]) -> Result<(), HarnessError> {
    writeln!(w, "# tskf results schema v{CSV_SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "algorithm",
        "delay_s",
        "rmse_m_mean",
        "rmse_m_std",
        "step_time_ms_mean",
        "step_time_ms_p99",
        "diverged_frac",
        "failed_frac",
    ])?;
    for c in cells {
        csv.write_record([
            c.algorithm.id().to_string(),
            fmt_num(c.delay_s, 1),
            fmt_num(c.rmse_m_mean, 4),
            fmt_num(c.rmse_m_std, 4),
            fmt_num(c.step_time_ms_mean, 6),
            fmt_num(c.step_time_ms_p99, 6),
            fmt_num(c.diverged_frac, 3),
            fmt_num(c.failed_frac, 3),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-run metrics as CSV.
pub fn write_runs_csv<W: Write>(mut w: W, runs: &[RunMetrics]) -> Result<(), HarnessError> {
    writeln!(w, "# tskf per-run metrics schema v{CSV_SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "algorithm",
        "delay_s",
        "delay_mode",
        "run",
        "rmse_m",
        "step_time_ms_mean",
        "step_time_ms_p99",
        "diverged",
        "failed",
        "delay_min_s",
        "delay_mean_s",
        "delay_max_s",
    ])?;
    for r in runs {
        let d = r.delay;
        csv.write_record([
            r.algorithm.id().to_string(),
            fmt_num(r.delay_s, 1),
            if r.dynamic { "dynamic" } else { "fixed" }.to_string(),
            r.run.to_string(),
            fmt_num(r.rmse_m, 4),
            fmt_num(r.step_time_ms_mean, 6),
            fmt_num(r.step_time_ms_p99, 6),
            r.diverged.to_string(),
            r.failed.to_string(),
            d.map_or("NaN".into(), |d| fmt_num(d.min_s, 2)),
            d.map_or("NaN".into(), |d| fmt_num(d.mean_s, 2)),
            d.map_or("NaN".into(), |d| fmt_num(d.max_s, 2)),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Aligned plain-text rendering of the results table.
pub fn format_table(cells: &[CellSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>12} {:>10} {:>14} {:>14} {:>9} {:>7}",
        "algorithm", "delay", "rmse_m_mean", "rmse_m_std", "step_ms_mean", "step_ms_p99", "diverged", "failed"
    );
    for c in cells {
        let rmse = if c.failed_frac >= 1.0 {
            "OOM/Fail".to_string()
        } else if c.diverged_frac >= 0.5 {
            format!(">{:.1} (Div.)", c.rmse_m_mean.min(999.9))
        } else {
            fmt_num(c.rmse_m_mean, 3)
        };
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>12} {:>10} {:>14} {:>14} {:>9.2} {:>7.2}",
            c.algorithm.id(),
            if c.dynamic { format!("dyn<={:.0}", c.delay_s) } else { format!("{:.1}", c.delay_s) },
            rmse,
            fmt_num(c.rmse_m_std, 3),
            fmt_num(c.step_time_ms_mean, 5),
            fmt_num(c.step_time_ms_p99, 5),
            c.diverged_frac,
            c.failed_frac
        );
    }
    out
}

/// Writes truth and every estimate of a traced run, one row per step.
pub fn write_trace_csv<W: Write>(mut w: W, run: &SingleRun, algorithms: &[Algorithm]) -> Result<(), HarnessError> {
    writeln!(w, "# tskf trace schema v{CSV_SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "time_s".into(), "truth_x".into(), "truth_y".into(), "truth_z".into()];
    for a in algorithms {
        for c in ["x", "y", "z", "err_m"] {
            header.push(format!("{}_{c}", a.id().replace('-', "_")));
        }
    }
    csv.write_record(&header)?;
    for (k, s) in run.inputs.truth.samples.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            format!("{:.2}", s.time),
            format!("{:.4}", s.state.position.x),
            format!("{:.4}", s.state.position.y),
            format!("{:.4}", s.state.position.z),
        ];
        for t in &run.traces {
            match t.positions.get(k) {
                Some(p) => {
                    row.extend(p.iter().map(|v| format!("{v:.4}")));
                    row.push(format!("{:.4}", (p - s.state.position).norm()));
                }
                None => row.extend(std::iter::repeat_n("NaN".to_string(), 4)),
            }
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-broadcast delay profile.
pub fn write_packets_csv<W: Write>(mut w: W, trace: &ChannelTrace) -> Result<(), HarnessError> {
    writeln!(w, "# tskf packet trace schema v{CSV_SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["seq", "gen_step", "gen_time_s", "distance_m", "dropped", "delivery_time_s", "delay_s"])?;
    for r in &trace.records {
        csv.write_record([
            r.seq.to_string(),
            r.gen_step.to_string(),
            format!("{:.2}", r.gen_time),
            format!("{:.3}", r.distance_m),
            r.dropped.to_string(),
            r.delivery_time.map_or("NaN".into(), |t| format!("{t:.2}")),
            r.delay_s.map_or("NaN".into(), |t| format!("{t:.2}")),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Learned residual against the true current at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub time: f64,
    pub mean: Vector3<f64>,
    pub variance: f64,
    pub current: Vector3<f64>,
    pub training_points: usize,
}

/// Replays `inputs` through a TSKF and samples its residual model once per second.
pub fn trace_residual(setup: &SimulationSetup, inputs: &RunInputs) -> Result<Vec<ResidualSample>, HarnessError> {
    let dt = setup.scenario.dt;
    let channel = &inputs.channel;
    let cfg = TskfConfig { max_delay_s: channel.delay_ceiling, ..setup.algorithms.tskf };
    let noise = setup.filter.noise(dt, channel.measurement_noise_std);
    let x0 = inputs.truth.samples[0].state;
    let mut f = Tskf::new(&x0, setup.filter.initial_covariance(), noise, setup.measurement, dt, cfg)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let every = ((1.0 / dt).round() as usize).max(1);
    let packets = &inputs.packets.delivered;
    let mut next = 0;
    let mut out = Vec::with_capacity(inputs.controls.len() / every + 1);
    for (k, u) in inputs.controls.iter().enumerate() {
        f.fast_predict(u).map_err(|e| HarnessError::Config(e.to_string()))?;
        while next < packets.len() && packets[next].delivery_step <= k + 1 {
            f.on_measurement(&packets[next]).map_err(|e| HarnessError::Config(e.to_string()))?;
            next += 1;
        }
        if k % every == 0 {
            let r = f.last_residual();
            out.push(ResidualSample {
                time: inputs.truth.samples[k].time,
                mean: r.mean,
                variance: r.variance,
                current: inputs.truth.samples[k].current,
                training_points: f.gp_window().map_or(0, |g| g.len()),
            });
        }
    }
    Ok(out)
}

pub fn write_residual_csv<W: Write>(mut w: W, samples: &[ResidualSample]) -> Result<(), HarnessError> {
    writeln!(w, "# tskf residual trace schema v{CSV_SCHEMA_VERSION}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "time_s",
        "mean_n",
        "mean_e",
        "mean_d",
        "std",
        "current_n",
        "current_e",
        "current_d",
        "training_points",
    ])?;
    for s in samples {
        let mut row = vec![format!("{:.2}", s.time)];
        row.extend(s.mean.iter().map(|v| format!("{v:.5}")));
        row.push(format!("{:.5}", s.variance.sqrt()));
        row.extend(s.current.iter().map(|v| format!("{v:.5}")));
        row.push(s.training_points.to_string());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Creates `path`'s parent directories and writes through `f`.
pub fn write_file(path: &Path, f: impl FnOnce(std::fs::File) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    f(std::fs::File::create(path)?)
}
