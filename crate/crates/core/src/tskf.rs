//! Two-speed filter: a fast GP-compensated predictor that records every step
//! in a ring buffer, and a slow path that applies each delayed measurement at
//! its generation step and projects the correction to the present through
//! the buffered transitions.

use std::collections::VecDeque;

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::buffer::{BufferEntry, CircularBuffer};
use crate::channel::AcousticPacket;
use crate::filter::{kalman_update, FilterError};
use crate::gp::{FeatureMap, GpHyperparams, GpPrediction, GpWindow, FEATURE_DIM};
use crate::linalg::{chi_square_quantile, symmetrize};
use crate::models::{
    ControlInput, KinematicModel, Matrix9, MeasurementMode, MeasurementModel, NavState, NoiseConfig, ProcessModel,
    Vector9, POS,
};

/// How delayed corrections reach the present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOptions {
    /// Project only the mean and leave the live covariance untouched.
    pub mean_only_projection: bool,
    /// Carry the covariance reduction forward as the rank-`M` factor
    /// `Phi K chol(S)` instead of re-running `F P F^T + Q` over the window.
    /// Both give the same result; the factor form is cheaper.
    pub low_rank_covariance: bool,
    /// Write the projected correction back into the buffered predictions so
    /// later packets see it.
    pub rewrite_history: bool,
    /// Reject updates whose normalized innovation squared exceeds this.
    pub gate: Option<f64>,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self { mean_only_projection: false, low_rank_covariance: true, rewrite_history: true, gate: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    /// Older than the buffer window.
    NotRetained,
    /// Stamped after the current step.
    Future,
    /// Failed the innovation gate.
    Gated,
    /// Innovation covariance could not be factored.
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { delay_steps: usize, correction_norm: f64, nis: f64 },
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FusionStats {
    pub updates: u64,
    pub rejected: u64,
    pub gated: u64,
}

/// Dimension-generic buffered out-of-sequence fusion core.
#[derive(Debug, Clone)]
pub struct DelayedFusion<const N: usize, P: ProcessModel<N>> {
    model: P,
    x: SVector<f64, N>,
    p: SMatrix<f64, N, N>,
    step: usize,
    buffer: CircularBuffer<N>,
    options: FusionOptions,
    stats: FusionStats,
    last_posterior: Option<(usize, SVector<f64, N>)>,
}

impl<const N: usize, P: ProcessModel<N>> DelayedFusion<N, P> {
    /// Starts at `step` with `(x0, p0)` stored as the first buffer entry.
    pub fn new(
        model: P,
        x0: SVector<f64, N>,
        p0: SMatrix<f64, N, N>,
        step: usize,
        capacity: usize,
        options: FusionOptions,
    ) -> Result<Self, FilterError> {
        let mut buffer = CircularBuffer::new(capacity)?;
        buffer.push(BufferEntry { step, x_pred: x0, p_pred: p0, f: SMatrix::identity(), q_eff: SMatrix::zeros() })?;
        Ok(Self { model, x: x0, p: p0, step, buffer, options, stats: FusionStats::default(), last_posterior: None })
    }

    pub fn state(&self) -> &SVector<f64, N> {
        &self.x
    }

    pub fn covariance(&self) -> &SMatrix<f64, N, N> {
        &self.p
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn buffer(&self) -> &CircularBuffer<N> {
        &self.buffer
    }

    pub fn stats(&self) -> FusionStats {
        self.stats
    }

    pub fn options(&self) -> &FusionOptions {
        &self.options
    }

    pub fn model(&self) -> &P {
        &self.model
    }

    /// Generation step and corrected state of the last applied measurement.
    pub fn last_posterior(&self) -> Option<(usize, SVector<f64, N>)> {
        self.last_posterior
    }

    /// One fast step: `x <- f(x, u) + bias`, `P <- F P F^T + q_eff`, then push.
    pub fn predict(
        &mut self,
        u: &P::Input,
        dt: f64,
        bias: &SVector<f64, N>,
        q_eff: &SMatrix<f64, N, N>,
    ) -> Result<(), FilterError> {
        let f = self.model.transition_jacobian(&self.x, u, dt)?;
        let x = self.model.normalize(self.model.transition(&self.x, u, dt)? + bias);
        let p = symmetrize(&(f * self.p * f.transpose() + q_eff));
        if !x.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        self.buffer.push(BufferEntry { step: self.step + 1, x_pred: x, p_pred: p, f, q_eff: *q_eff })?;
        self.x = x;
        self.p = p;
        self.step += 1;
        Ok(())
    }

    /// Applies `z` observed at `gen_step` and fast-forwards the correction.
    ///
    /// Rejections leave the live estimate untouched.
    pub fn on_measurement<const M: usize, H: MeasurementModel<N, M>>(
        &mut self,
        h: &H,
        gen_step: usize,
        z: &SVector<f64, M>,
        r: &SMatrix<f64, M, M>,
    ) -> Result<UpdateOutcome, FilterError> {
        if gen_step > self.step {
            return Ok(self.reject(RejectReason::Future));
        }
        let Ok(entry) = self.buffer.lookup(gen_step) else {
            return Ok(self.reject(RejectReason::NotRetained));
        };
        let (x_old, p_old) = (entry.x_pred, entry.p_pred);
        let innovation = h.residual(z, &h.predict(&x_old)?);
        let jac = h.jacobian(&x_old)?;
        let upd = match kalman_update(&p_old, &jac, r, innovation) {
            Ok(u) => u,
            Err(FilterError::SingularInnovation) => return Ok(self.reject(RejectReason::Singular)),
            Err(e) => return Err(e),
        };
        if self.options.gate.is_some_and(|g| upd.nis > g) {
            self.stats.gated += 1;
            return Ok(self.reject(RejectReason::Gated));
        }

        let rewrite = self.options.rewrite_history;
        let mean_only = self.options.mean_only_projection;
        let low_rank = self.options.low_rank_covariance;
        let mut u = match upd.innovation_cov.cholesky() {
            Some(c) => upd.gain * c.l(),
            None => return Ok(self.reject(RejectReason::Singular)),
        };
        let mut delta = upd.correction;
        let mut pc = upd.covariance;
        self.last_posterior = Some((gen_step, self.model.normalize(x_old + delta)));
        if rewrite {
            let e = self.buffer.lookup_mut(gen_step)?;
            e.x_pred = self.model.normalize(x_old + delta);
            e.p_pred = pc;
        }
        for k in gen_step + 1..=self.step {
            let e = self.buffer.lookup_mut(k)?;
            delta = e.f * delta;
            if low_rank {
                u = e.f * u;
                if rewrite {
                    e.p_pred -= u * u.transpose();
                }
            } else if !mean_only || rewrite {
                pc = symmetrize(&(e.f * pc * e.f.transpose() + e.q_eff));
                if rewrite {
                    e.p_pred = pc;
                }
            }
            if rewrite {
                e.x_pred = self.model.normalize(e.x_pred + delta);
            }
        }
        if low_rank && gen_step < self.step {
            pc = symmetrize(&(self.p - u * u.transpose()));
        }
        let x = self.model.normalize(self.x + delta);
        if !x.iter().chain(pc.iter()).all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        self.x = x;
        if !mean_only {
            self.p = pc;
        }
        self.stats.updates += 1;
        Ok(UpdateOutcome::Applied { delay_steps: self.step - gen_step, correction_norm: delta.norm(), nis: upd.nis })
    }

    fn reject(&mut self, reason: RejectReason) -> UpdateOutcome {
        self.stats.rejected += 1;
        UpdateOutcome::Rejected(reason)
    }
}

/// Settings of the learned residual compensation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpCompensationConfig {
    pub enabled: bool,
    pub hyperparams: GpHyperparams,
    /// Training window size.
    pub window: usize,
    /// Shortest span between the two fixes a training target is differenced over, s.
    pub baseline_s: f64,
    pub features: FeatureMap,
}

impl Default for GpCompensationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hyperparams: GpHyperparams::default(),
            window: 50,
            baseline_s: 20.0,
            features: FeatureMap::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TskfConfig {
    /// Longest delay the buffer must cover, s.
    pub max_delay_s: f64,
    pub mean_only_projection: bool,
    pub low_rank_covariance: bool,
    pub rewrite_history: bool,
    /// Innovation gate probability; `None` disables gating.
    pub gate_probability: Option<f64>,
    pub gp: GpCompensationConfig,
}

impl Default for TskfConfig {
    fn default() -> Self {
        Self {
            max_delay_s: 30.0,
            mean_only_projection: false,
            low_rank_covariance: true,
            rewrite_history: true,
            gate_probability: Some(0.999),
            gp: GpCompensationConfig::default(),
        }
    }
}

/// One processed packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementEvent {
    pub gen_step: usize,
    pub recv_step: usize,
    pub delay_steps: usize,
    pub correction_norm: f64,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

/// Turns pairs of fix-corrected positions into velocity-residual targets.
///
/// Between two generation steps the corrected track moved by `dp` while the
/// analytic model alone moved it by `da`; `(dp - da) / dt` is the NED
/// velocity the model misses. Both ends come from fixes, so the target does
/// not feed back on the residual estimate itself.
#[derive(Debug, Clone)]
struct ResidualTracker {
    /// Running sum of analytic displacement, one entry per retained step.
    analytic: VecDeque<Vector3<f64>>,
    first_step: usize,
    retain: usize,
    /// `(gen_step, corrected position, analytic sum)` of recent fixes.
    anchors: VecDeque<(usize, Vector3<f64>, Vector3<f64>)>,
    baseline_steps: usize,
}

impl ResidualTracker {
    fn new(retain: usize, baseline_steps: usize) -> Self {
        let mut analytic = VecDeque::with_capacity(retain + 1);
        analytic.push_back(Vector3::zeros());
        Self {
            analytic,
            first_step: 0,
            retain: retain.max(1),
            anchors: VecDeque::new(),
            baseline_steps: baseline_steps.max(1),
        }
    }

    fn advance(&mut self, displacement: &Vector3<f64>) {
        let last = *self.analytic.back().expect("tracker history is never empty");
        self.analytic.push_back(last + displacement);
        if self.analytic.len() > self.retain {
            self.analytic.pop_front();
            self.first_step += 1;
        }
    }

    /// Records a fix and returns the target paired with the newest fix at
    /// least one baseline older.
    fn record_fix(&mut self, gen_step: usize, position: Vector3<f64>, dt: f64) -> Option<Vector3<f64>> {
        let a = *self.analytic.get(gen_step.checked_sub(self.first_step)?)?;
        let target = self
            .anchors
            .iter()
            .rev()
            .find(|(s, _, _)| *s + self.baseline_steps <= gen_step)
            .map(|(s, p, a0)| ((position - p) - (a - a0)) / ((gen_step - s) as f64 * dt));
        let pos = self.anchors.iter().position(|(s, _, _)| *s > gen_step).unwrap_or(self.anchors.len());
        self.anchors.insert(pos, (gen_step, position, a));
        // Anchors carry their own analytic sum, so they outlive the step history.
        let keep = self.retain + self.baseline_steps;
        while self.anchors.front().is_some_and(|(s, _, _)| *s + keep < gen_step) {
            self.anchors.pop_front();
        }
        target
    }
}

/// The 9-state navigation filter.
#[derive(Debug, Clone)]
pub struct Tskf {
    core: DelayedFusion<9, KinematicModel>,
    noise: NoiseConfig,
    measurement: MeasurementMode,
    dt: f64,
    config: TskfConfig,
    gp: Option<GpWindow<FEATURE_DIM>>,
    tracker: ResidualTracker,
    last_gp: GpPrediction,
    events: Vec<MeasurementEvent>,
}

impl Tskf {
    pub fn new(
        x0: &NavState,
        p0: Matrix9,
        noise: NoiseConfig,
        measurement: MeasurementMode,
        dt: f64,
        config: TskfConfig,
    ) -> Result<Self, FilterError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FilterError::Config(format!("dt must be positive, got {dt}")));
        }
        let capacity = CircularBuffer::<9>::capacity_for(config.max_delay_s, dt);
        let options = FusionOptions {
            mean_only_projection: config.mean_only_projection,
            low_rank_covariance: config.low_rank_covariance,
            rewrite_history: config.rewrite_history,
            gate: config.gate_probability.map(|p| chi_square_quantile(3, p)),
        };
        let gp = if config.gp.enabled {
            Some(
                GpWindow::new(config.gp.window, config.gp.hyperparams)
                    .map_err(|e| FilterError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        let baseline_steps = (config.gp.baseline_s / dt).round() as usize;
        Ok(Self {
            core: DelayedFusion::new(KinematicModel::default(), x0.to_vector(), p0, 0, capacity, options)?,
            noise,
            measurement,
            dt,
            config,
            gp,
            tracker: ResidualTracker::new(capacity, baseline_steps),
            last_gp: GpPrediction { mean: Vector3::zeros(), variance: 0.0, degraded: false },
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &TskfConfig {
        &self.config
    }

    /// Advances one fast step with the GP residual folded into mean and covariance.
    pub fn fast_predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        let mut body = NavState::from_vector(self.core.state());
        if let Some(dvl) = u.dvl {
            body.velocity = dvl;
        }
        let features = self.config.gp.features.features(&body);
        self.last_gp = match &self.gp {
            Some(gp) => gp.predict(&features),
            None => GpPrediction { mean: Vector3::zeros(), variance: 0.0, degraded: false },
        };
        let mut bias = Vector9::zeros();
        bias.fixed_rows_mut::<3>(POS).copy_from(&(self.last_gp.mean * self.dt));
        let mut q_eff = self.noise.process;
        let sigma_res = self.last_gp.variance * self.dt * self.dt;
        for i in POS..POS + 3 {
            q_eff[(i, i)] += sigma_res;
        }

        let before = self.core.state().fixed_rows::<3>(POS).into_owned();
        self.core.predict(u, self.dt, &bias, &q_eff)?;
        let after = self.core.state().fixed_rows::<3>(POS).into_owned();
        self.tracker.advance(&(after - before - self.last_gp.mean * self.dt));
        Ok(())
    }

    /// Fuses a delayed packet; rejected packets are logged, never fatal.
    pub fn on_measurement(&mut self, pkt: &AcousticPacket) -> Result<UpdateOutcome, FilterError> {
        let outcome = self.core.on_measurement(&self.measurement, pkt.gen_step, &pkt.payload, &pkt.noise_cov)?;
        let (accepted, correction_norm, reason) = match outcome {
            UpdateOutcome::Applied { correction_norm, .. } => (true, correction_norm, None),
            UpdateOutcome::Rejected(r) => (false, 0.0, Some(r)),
        };
        if accepted {
            self.learn_from_fix()?;
        }
        self.events.push(MeasurementEvent {
            gen_step: pkt.gen_step,
            recv_step: self.core.step(),
            delay_steps: self.core.step().saturating_sub(pkt.gen_step),
            correction_norm,
            accepted,
            reason,
        });
        Ok(outcome)
    }

    fn learn_from_fix(&mut self) -> Result<(), FilterError> {
        let (Some(gp), Some((gen_step, x))) = (self.gp.as_mut(), self.core.last_posterior()) else {
            return Ok(());
        };
        let state = NavState::from_vector(&x);
        if let Some(y) = self.tracker.record_fix(gen_step, state.position, self.dt) {
            gp.observe(self.config.gp.features.features(&state), y);
        }
        Ok(())
    }

    /// Latest fused estimate, its covariance and step.
    pub fn current_estimate(&self) -> (Vector9, Matrix9, usize) {
        (*self.core.state(), *self.core.covariance(), self.core.step())
    }

    pub fn state(&self) -> NavState {
        NavState::from_vector(self.core.state())
    }

    pub fn covariance(&self) -> &Matrix9 {
        self.core.covariance()
    }

    pub fn step(&self) -> usize {
        self.core.step()
    }

    pub fn stats(&self) -> FusionStats {
        self.core.stats()
    }

    pub fn events(&self) -> &[MeasurementEvent] {
        &self.events
    }

    /// GP output used by the most recent fast step.
    pub fn last_residual(&self) -> &GpPrediction {
        &self.last_gp
    }

    pub fn gp_window(&self) -> Option<&GpWindow<FEATURE_DIM>> {
        self.gp.as_ref()
    }

    pub fn buffer(&self) -> &CircularBuffer<9> {
        self.core.buffer()
    }
}
