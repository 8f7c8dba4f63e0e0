//! Parametric acoustic channel: distance-driven delay, Bernoulli loss,
//! Gaussian measurement corruption and an ordered delivery queue.
//!
//! Delay model:
//! ```text
//! T = clamp(floor + distance * (1/sound_speed + queueing_slope) + N(0, jitter^2), floor, ceiling)
//! ```
//! Delivery instants are snapped up to the filter's step grid, so a packet
//! generated at step `g` is handed over at step `g + ceil(T / dt)`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::{measure, MeasurementMode, ModelError};
use crate::scenario::{Truth, TruthSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// m/s.
    pub sound_speed: f64,
    /// Seconds between leader broadcasts.
    pub broadcast_period: f64,
    pub loss_probability: f64,
    /// s.
    pub delay_floor: f64,
    /// s.
    pub delay_ceiling: f64,
    /// Extra queueing delay per metre of separation, s/m.
    pub queueing_slope: f64,
    /// s.
    pub queueing_jitter_std: f64,
    /// Per-axis std of the broadcast measurement noise.
    pub measurement_noise_std: [f64; 3],
    /// Leader station in NED, m.
    pub leader_position: [f64; 3],
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            sound_speed: 1500.0,
            broadcast_period: 5.0,
            loss_probability: 0.15,
            delay_floor: 5.0,
            delay_ceiling: 30.0,
            queueing_slope: 0.12,
            queueing_jitter_std: 0.0,
            measurement_noise_std: [1.0, 1.0, 1.0],
            leader_position: [0.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid channel field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ChannelError {
    ChannelError::Invalid { field, reason: reason.into() }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.sound_speed > 0.0 && self.sound_speed.is_finite()) {
            return Err(invalid("sound_speed", "must be positive"));
        }
        if !(self.broadcast_period > 0.0 && self.broadcast_period.is_finite()) {
            return Err(invalid("broadcast_period", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(invalid("loss_probability", format!("must lie in [0, 1], got {}", self.loss_probability)));
        }
        if !(self.delay_floor >= 0.0 && self.delay_floor.is_finite()) {
            return Err(invalid("delay_floor", "must be non-negative"));
        }
        if !(self.delay_ceiling >= self.delay_floor && self.delay_ceiling.is_finite()) {
            return Err(invalid("delay_ceiling", "must be finite and not below delay_floor"));
        }
        if !(self.queueing_slope >= 0.0 && self.queueing_slope.is_finite()) {
            return Err(invalid("queueing_slope", "must be non-negative"));
        }
        if !(self.queueing_jitter_std >= 0.0 && self.queueing_jitter_std.is_finite()) {
            return Err(invalid("queueing_jitter_std", "must be non-negative"));
        }
        if self.measurement_noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("measurement_noise_std", "must be non-negative"));
        }
        if self.leader_position.iter().any(|p| !p.is_finite()) {
            return Err(invalid("leader_position", "must be finite"));
        }
        Ok(())
    }

    pub fn noise_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.measurement_noise_std).map(|s| s * s))
    }

    pub fn leader(&self) -> Vector3<f64> {
        Vector3::from(self.leader_position)
    }

    /// Pins the delay to `seconds` for a fixed-delay experiment cell.
    pub fn with_fixed_delay(mut self, seconds: f64) -> Self {
        self.delay_floor = seconds;
        self.delay_ceiling = seconds;
        self
    }
}

/// A delayed cooperative measurement in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticPacket {
    /// Broadcast sequence number.
    pub seq: u64,
    pub gen_step: usize,
    pub gen_time: f64,
    pub payload: Vector3<f64>,
    pub noise_cov: Matrix3<f64>,
    pub delivery_step: usize,
    pub delivery_time: f64,
}

impl AcousticPacket {
    /// Delay in filter steps.
    pub fn delay_steps(&self) -> usize {
        self.delivery_step - self.gen_step
    }
}

/// One-way delay for the given separation, in seconds.
pub fn propagation_delay<R: Rng + ?Sized>(distance: f64, cfg: &ChannelConfig, rng: &mut R) -> f64 {
    let jitter: f64 = rng.sample(StandardNormal);
    let raw = cfg.delay_floor
        + distance.max(0.0) * (1.0 / cfg.sound_speed + cfg.queueing_slope)
        + cfg.queueing_jitter_std * jitter;
    raw.clamp(cfg.delay_floor, cfg.delay_ceiling)
}

fn delay_in_steps(delay: f64, cfg: &ChannelConfig, dt: f64) -> usize {
    let up = (delay / dt - 1e-9).ceil().max(0.0) as usize;
    let cap = (cfg.delay_ceiling / dt + 1e-9).floor() as usize;
    up.min(cap)
}

/// Broadcasts the leader's observation of `truth`, or `None` if the packet is lost.
pub fn transmit<R: Rng + ?Sized>(
    seq: u64,
    truth: &TruthSample,
    dt: f64,
    cfg: &ChannelConfig,
    mode: &MeasurementMode,
    rng: &mut R,
) -> Result<Option<AcousticPacket>, ChannelError> {
    if rng.gen::<f64>() < cfg.loss_probability {
        return Ok(None);
    }
    let clean = measure(mode, &truth.state)?;
    let noise = Vector3::new(
        cfg.measurement_noise_std[0] * rng.sample::<f64, _>(StandardNormal),
        cfg.measurement_noise_std[1] * rng.sample::<f64, _>(StandardNormal),
        cfg.measurement_noise_std[2] * rng.sample::<f64, _>(StandardNormal),
    );
    let distance = (truth.state.position - cfg.leader()).norm();
    let delay = propagation_delay(distance, cfg, rng);
    let delivery_step = truth.step + delay_in_steps(delay, cfg, dt);
    Ok(Some(AcousticPacket {
        seq,
        gen_step: truth.step,
        gen_time: truth.time,
        payload: clean + noise,
        noise_cov: cfg.noise_covariance(),
        delivery_step,
        delivery_time: delivery_step as f64 * dt,
    }))
}

#[derive(Debug, Clone, PartialEq)]
struct Pending(AcousticPacket);

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.delivery_time.total_cmp(&other.0.delivery_time).then(self.0.seq.cmp(&other.0.seq))
    }
}

/// Packets in flight, released in delivery order.
#[derive(Debug, Default, Clone)]
pub struct DeliveryQueue {
    heap: BinaryHeap<Reverse<Pending>>,
}

impl DeliveryQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, packet: AcousticPacket) {
        self.heap.push(Reverse(Pending(packet)));
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Removes and returns every packet with `delivery_time <= now`, earliest first.
    pub fn poll_delivered(&mut self, now: f64) -> Vec<AcousticPacket> {
        let mut out = Vec::new();
        while self.heap.peek().is_some_and(|Reverse(p)| p.0.delivery_time <= now) {
            if let Some(Reverse(p)) = self.heap.pop() {
                out.push(p.0);
            }
        }
        out
    }
}

/// Per-broadcast record for delay-profile plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub seq: u64,
    pub gen_step: usize,
    pub gen_time: f64,
    pub distance_m: f64,
    pub dropped: bool,
    pub delivery_time: Option<f64>,
    pub delay_s: Option<f64>,
}

/// Every broadcast of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelTrace {
    /// Surviving packets, in delivery order.
    pub delivered: Vec<AcousticPacket>,
    pub records: Vec<PacketRecord>,
}

impl ChannelTrace {
    pub fn loss_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.dropped).count() as f64 / self.records.len() as f64
    }
}

/// Broadcasts at every `broadcast_period` after time zero and queues the survivors.
pub fn simulate_channel<R: Rng + ?Sized>(
    truth: &Truth,
    dt: f64,
    cfg: &ChannelConfig,
    mode: &MeasurementMode,
    rng: &mut R,
) -> Result<ChannelTrace, ChannelError> {
    cfg.validate()?;
    let period_steps = ((cfg.broadcast_period / dt).round() as usize).max(1);
    let mut queue = DeliveryQueue::new();
    let mut records = Vec::new();
    for (seq, sample) in truth.samples.iter().skip(period_steps).step_by(period_steps).enumerate() {
        let distance = (sample.state.position - cfg.leader()).norm();
        let packet = transmit(seq as u64, sample, dt, cfg, mode, rng)?;
        records.push(PacketRecord {
            seq: seq as u64,
            gen_step: sample.step,
            gen_time: sample.time,
            distance_m: distance,
            dropped: packet.is_none(),
            delivery_time: packet.as_ref().map(|p| p.delivery_time),
            delay_s: packet.as_ref().map(|p| p.delivery_time - p.gen_time),
        });
        if let Some(p) = packet {
            queue.push(p);
        }
    }
    let delivered = queue.poll_delivered(f64::INFINITY);
    Ok(ChannelTrace { delivered, records })
}
