//! Sliding-window factor-graph smoother.
//!
//! The generic part is a dense Gauss-Newton solver over block variables with
//! whitened factors. The navigation wrapper keeps 1 Hz nodes holding the
//! nav state plus a random-walk NED drift, links them by preintegrated dead
//! reckoning, attaches delayed fixes at their generation steps and
//! marginalizes nodes that leave the window into a dense prior.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::channel::AcousticPacket;
use crate::filter::FilterError;
use crate::models::{
    ControlInput, KinematicModel, Matrix9, MeasurementMode, MeasurementModel, NavState, NoiseConfig, ProcessModel,
    Vector9, POS,
};

/// Initial Levenberg damping used once the normal equations fail to factor.
pub const INITIAL_DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgoConfig {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease falls below this.
    pub convergence_tol: f64,
    /// Spacing of trajectory nodes, s.
    pub node_period_s: f64,
    /// Extra window length beyond the delay ceiling, s.
    pub window_margin_s: f64,
    /// Prior std of the drift velocity, m/s.
    pub drift_prior_std: f64,
    /// Drift random walk, m/s per sqrt(s).
    pub drift_random_walk: f64,
}

impl Default for FgoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            convergence_tol: 1e-6,
            node_period_s: 1.0,
            window_margin_s: 5.0,
            drift_prior_std: 0.5,
            drift_random_walk: 0.002,
        }
    }
}

impl FgoConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: &str| Err(FilterError::Config(format!("fgo: {m}")));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be non-negative");
        }
        if !(self.node_period_s > 0.0) {
            return bad("node_period_s must be positive");
        }
        if !(self.window_margin_s >= 0.0) {
            return bad("window_margin_s must be non-negative");
        }
        if !(self.drift_prior_std > 0.0 && self.drift_random_walk > 0.0) {
            return bad("drift noise must be positive");
        }
        Ok(())
    }
}

/// Whitened residual and its Jacobian blocks, one per key.
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

/// A term `|r(x_keys)|^2 / 2` of the cost, already whitened.
pub trait Factor {
    fn keys(&self) -> &[usize];
    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Largest damping needed to factor the normal equations.
    pub damping: f64,
}

pub fn total_cost(vars: &[DVector<f64>], factors: &[Box<dyn Factor + '_>]) -> f64 {
    factors.iter().map(|f| 0.5 * f.linearize(vars).residual.norm_squared()).sum()
}

/// Dense Gauss-Newton with Levenberg fallback; accepted iterations never raise the cost.
pub fn optimize(
    vars: &mut [DVector<f64>],
    factors: &[Box<dyn Factor + '_>],
    max_iterations: usize,
    convergence_tol: f64,
) -> OptimizeReport {
    let offsets: Vec<usize> = vars
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.len();
            Some(o)
        })
        .collect();
    let dim: usize = vars.iter().map(|v| v.len()).sum();
    let mut cost = total_cost(vars, factors);
    let initial_cost = cost;
    let mut lambda = 0.0f64;
    let mut max_lambda = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for f in factors {
            let lin = f.linearize(vars);
            for (a, ja) in f.keys().iter().zip(&lin.jacobians) {
                let oa = offsets[*a];
                let mut ga = g.rows_mut(oa, ja.ncols());
                ga += ja.tr_mul(&lin.residual);
                for (b, jb) in f.keys().iter().zip(&lin.jacobians) {
                    let ob = offsets[*b];
                    let mut hab = h.view_mut((oa, ob), (ja.ncols(), jb.ncols()));
                    hab += ja.tr_mul(jb);
                }
            }
        }
        let step = loop {
            let mut damped = h.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda;
            }
            if let Some(c) = damped.cholesky() {
                break Some(c.solve(&(-&g)));
            }
            lambda = if lambda == 0.0 { INITIAL_DAMPING } else { lambda * 10.0 };
            max_lambda = max_lambda.max(lambda);
            if lambda > 1e12 {
                break None;
            }
        };
        let Some(delta) = step else { break };
        let candidate: Vec<DVector<f64>> =
            vars.iter().zip(&offsets).map(|(v, &o)| v + delta.rows(o, v.len())).collect();
        let new_cost = total_cost(&candidate, factors);
        // Decrease promised by the local quadratic model.
        let predicted = -g.dot(&delta) - 0.5 * delta.dot(&(&h * &delta));
        if new_cost <= cost {
            let decrease = cost - new_cost;
            vars.iter_mut().zip(candidate).for_each(|(v, c)| *v = c);
            let prev = cost;
            cost = new_cost;
            // An undamped step the model predicted exactly landed on the minimum.
            let exact = lambda == 0.0 && (decrease - predicted).abs() <= 1e-6 * predicted.abs().max(f64::MIN_POSITIVE);
            if exact || decrease <= convergence_tol * prev.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else if new_cost - cost <= 1e-12 * cost.max(f64::MIN_POSITIVE) {
            // Already at the minimum up to rounding.
            converged = true;
            break;
        } else {
            lambda = if lambda == 0.0 { INITIAL_DAMPING } else { lambda * 10.0 };
            max_lambda = max_lambda.max(lambda);
        }
    }
    OptimizeReport { iterations, initial_cost, final_cost: cost, converged, damping: max_lambda }
}

/// Inverse lower Cholesky factor of a covariance, i.e. a whitening matrix.
pub fn whitener(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    let l = cov.clone().cholesky().ok_or(FilterError::SingularInnovation)?.l();
    l.solve_lower_triangular(&DMatrix::identity(cov.nrows(), cov.nrows())).ok_or(FilterError::SingularInnovation)
}

/// `sqrt_info * (x - mean)`.
pub struct PriorFactor {
    pub key: [usize; 1],
    pub mean: DVector<f64>,
    pub sqrt_info: DMatrix<f64>,
}

impl Factor for PriorFactor {
    fn keys(&self) -> &[usize] {
        &self.key
    }

    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization {
        Linearization {
            residual: &self.sqrt_info * (&vars[self.key[0]] - &self.mean),
            jacobians: vec![self.sqrt_info.clone()],
        }
    }
}

/// `W (x_to - F x_from - b)`.
pub struct LinearBetweenFactor {
    pub keys: [usize; 2],
    pub transition: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub whitener: DMatrix<f64>,
}

impl Factor for LinearBetweenFactor {
    fn keys(&self) -> &[usize] {
        &self.keys
    }

    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization {
        let r = &vars[self.keys[1]] - &self.transition * &vars[self.keys[0]] - &self.offset;
        Linearization {
            residual: &self.whitener * r,
            jacobians: vec![-(&self.whitener * &self.transition), self.whitener.clone()],
        }
    }
}

/// `W (z - H x)`.
pub struct LinearObservationFactor {
    pub key: [usize; 1],
    pub matrix: DMatrix<f64>,
    pub z: DVector<f64>,
    pub whitener: DMatrix<f64>,
}

impl Factor for LinearObservationFactor {
    fn keys(&self) -> &[usize] {
        &self.key
    }

    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization {
        let r = &self.z - &self.matrix * &vars[self.key[0]];
        Linearization { residual: &self.whitener * r, jacobians: vec![-(&self.whitener * &self.matrix)] }
    }
}

/// Node layout: nav state then NED drift velocity.
pub const NODE_DIM: usize = 12;
const DRIFT: usize = 9;

/// Dead reckoning between two nodes, linearized about the start node's
/// value when the interval opened.
#[derive(Debug, Clone)]
struct Preintegration {
    lin: Vector9,
    end: Vector9,
    jac: Matrix9,
    duration: f64,
    whitener: DMatrix<f64>,
    /// Dead-reckoned positions at every fast step of the interval.
    positions: Vec<Vector3<f64>>,
}

impl Preintegration {
    fn predict(&self, model: &KinematicModel, start: &Vector9, drift: &Vector3<f64>, tau: f64) -> Vector9 {
        let mut x = self.end + self.jac * model.difference(start, &self.lin);
        {
            let mut seg = x.fixed_rows_mut::<3>(POS);
            seg += drift * tau;
        }
        x
    }
}

struct OdometryFactor<'a> {
    keys: [usize; 2],
    pre: &'a Preintegration,
    model: KinematicModel,
    drift_whitener: f64,
}

impl Factor for OdometryFactor<'_> {
    fn keys(&self) -> &[usize] {
        &self.keys
    }

    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization {
        let a = &vars[self.keys[0]];
        let b = &vars[self.keys[1]];
        let sa = Vector9::from_iterator(a.rows(0, 9).iter().copied());
        let sb = Vector9::from_iterator(b.rows(0, 9).iter().copied());
        let ca = Vector3::new(a[DRIFT], a[DRIFT + 1], a[DRIFT + 2]);
        let cb = Vector3::new(b[DRIFT], b[DRIFT + 1], b[DRIFT + 2]);
        let pred = self.pre.predict(&self.model, &sa, &ca, self.pre.duration);
        let rs = self.model.difference(&sb, &pred);
        let mut raw = DVector::<f64>::zeros(NODE_DIM);
        raw.rows_mut(0, 9).copy_from(&rs);
        raw.rows_mut(DRIFT, 3).copy_from(&(cb - ca));

        let mut ja = DMatrix::<f64>::zeros(NODE_DIM, NODE_DIM);
        ja.view_mut((0, 0), (9, 9)).copy_from(&(-self.pre.jac));
        for i in 0..3 {
            ja[(POS + i, DRIFT + i)] = -self.pre.duration;
            ja[(DRIFT + i, DRIFT + i)] = -1.0;
        }
        let jb = DMatrix::<f64>::identity(NODE_DIM, NODE_DIM);
        let w = self.whiten();
        Linearization { residual: &w * raw, jacobians: vec![&w * ja, w * jb] }
    }
}

impl OdometryFactor<'_> {
    fn whiten(&self) -> DMatrix<f64> {
        let mut w = DMatrix::<f64>::zeros(NODE_DIM, NODE_DIM);
        w.view_mut((0, 0), (9, 9)).copy_from(&self.pre.whitener);
        for i in 0..3 {
            w[(DRIFT + i, DRIFT + i)] = self.drift_whitener;
        }
        w
    }
}

/// A delayed fix attached to the node at or before its generation step.
#[derive(Debug, Clone)]
struct Fix {
    node_step: usize,
    /// Analytic displacement from the node's linearization point to the fix.
    offset: Vector3<f64>,
    /// Time from the node to the fix, s.
    tau: f64,
    z: Vector3<f64>,
    whitener: SMatrix<f64, 3, 3>,
}

struct FixFactor<'a> {
    key: [usize; 1],
    fix: &'a Fix,
    measurement: MeasurementMode,
}

impl Factor for FixFactor<'_> {
    fn keys(&self) -> &[usize] {
        &self.key
    }

    fn linearize(&self, vars: &[DVector<f64>]) -> Linearization {
        let v = &vars[self.key[0]];
        let mut s = Vector9::from_iterator(v.rows(0, 9).iter().copied());
        let c = Vector3::new(v[DRIFT], v[DRIFT + 1], v[DRIFT + 2]);
        let shift = self.fix.offset + c * self.fix.tau;
        {
            let mut seg = s.fixed_rows_mut::<3>(POS);
            seg += shift;
        }
        // A degenerate geometry contributes nothing rather than poisoning the solve.
        let (zhat, h) = match (self.measurement.predict(&s), self.measurement.jacobian(&s)) {
            (Ok(zh), Ok(h)) => (zh, h),
            _ => return Linearization { residual: DVector::zeros(3), jacobians: vec![DMatrix::zeros(3, NODE_DIM)] },
        };
        let r = self.fix.whitener * self.measurement.residual(&self.fix.z, &zhat);
        let hw = -(self.fix.whitener * h);
        let mut j = DMatrix::<f64>::zeros(3, NODE_DIM);
        j.view_mut((0, 0), (3, 9)).copy_from(&hw);
        let hp = hw.fixed_columns::<3>(POS) * self.fix.tau;
        j.view_mut((0, DRIFT), (3, 3)).copy_from(&hp);
        Linearization { residual: DVector::from_column_slice(r.as_slice()), jacobians: vec![j] }
    }
}

#[derive(Debug, Clone)]
struct Node {
    step: usize,
    value: DVector<f64>,
}

/// Counters for diagnostics and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FgoStats {
    pub optimizations: u64,
    pub iterations: u64,
    pub non_converged: u64,
    pub rejected: u64,
    pub marginalized: u64,
    /// Largest window dimension solved.
    pub max_dimension: usize,
}

/// Sliding-window smoother on the navigation model.
pub struct FgoNavigator {
    model: KinematicModel,
    noise: NoiseConfig,
    measurement: MeasurementMode,
    dt: f64,
    config: FgoConfig,
    node_steps: usize,
    window_steps: usize,
    nodes: VecDeque<Node>,
    /// Interval `i` joins node `i` to node `i + 1`.
    intervals: VecDeque<Preintegration>,
    prior: PriorFactor,
    fixes: Vec<Fix>,
    // Open interval since the newest node.
    open_lin: Vector9,
    open_end: Vector9,
    open_jac: Matrix9,
    open_cov: Matrix9,
    open_positions: Vec<Vector3<f64>>,
    open_len: usize,
    head: Vector9,
    step: usize,
    pub stats: FgoStats,
    pub last_report: Option<OptimizeReport>,
}

impl FgoNavigator {
    pub fn new(
        x0: &NavState,
        p0: Matrix9,
        noise: NoiseConfig,
        measurement: MeasurementMode,
        dt: f64,
        max_delay_s: f64,
        config: FgoConfig,
    ) -> Result<Self, FilterError> {
        config.validate()?;
        let node_steps = ((config.node_period_s / dt).round() as usize).max(1);
        let window_steps = ((max_delay_s + config.window_margin_s) / dt).ceil() as usize;
        let x = x0.to_vector();
        let mut cov = DMatrix::<f64>::zeros(NODE_DIM, NODE_DIM);
        cov.view_mut((0, 0), (9, 9)).copy_from(&p0);
        for i in 0..3 {
            cov[(DRIFT + i, DRIFT + i)] = config.drift_prior_std.powi(2);
        }
        let mut value = DVector::<f64>::zeros(NODE_DIM);
        value.rows_mut(0, 9).copy_from(&x);
        let prior = PriorFactor { key: [0], mean: value.clone(), sqrt_info: whitener(&cov)? };
        let mut nodes = VecDeque::new();
        nodes.push_back(Node { step: 0, value });
        Ok(Self {
            model: KinematicModel::default(),
            noise,
            measurement,
            dt,
            config,
            node_steps,
            window_steps,
            nodes,
            intervals: VecDeque::new(),
            prior,
            fixes: Vec::new(),
            open_lin: x,
            open_end: x,
            open_jac: Matrix9::identity(),
            open_cov: Matrix9::zeros(),
            open_positions: vec![x.fixed_rows::<3>(POS).into_owned()],
            open_len: 0,
            head: x,
            step: 0,
            stats: FgoStats::default(),
            last_report: None,
        })
    }

    pub fn state(&self) -> &Vector9 {
        &self.head
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn newest(&self) -> (Vector9, Vector3<f64>) {
        let v = &self.nodes.back().expect("window keeps at least one node").value;
        (Vector9::from_iterator(v.rows(0, 9).iter().copied()), Vector3::new(v[DRIFT], v[DRIFT + 1], v[DRIFT + 2]))
    }

    fn refresh_head(&mut self) {
        let (s, c) = self.newest();
        let tau = self.open_len as f64 * self.dt;
        let mut x = self.open_end + self.open_jac * self.model.difference(&s, &self.open_lin);
        {
            let mut seg = x.fixed_rows_mut::<3>(POS);
            seg += c * tau;
        }
        self.head = self.model.normalize(x);
    }

    pub fn predict(&mut self, u: &ControlInput) -> Result<(), FilterError> {
        let f = self.model.transition_jacobian(&self.open_end, u, self.dt)?;
        self.open_end = self.model.normalize(self.model.transition(&self.open_end, u, self.dt)?);
        self.open_jac = f * self.open_jac;
        self.open_cov = f * self.open_cov * f.transpose() + self.noise.process;
        self.open_positions.push(self.open_end.fixed_rows::<3>(POS).into_owned());
        self.open_len += 1;
        self.step += 1;
        if self.step.is_multiple_of(self.node_steps) {
            self.close_interval()?;
            self.marginalize_old()?;
            self.solve();
        }
        self.refresh_head();
        if !self.head.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        Ok(())
    }

    fn close_interval(&mut self) -> Result<(), FilterError> {
        let cov = DMatrix::from_column_slice(9, 9, self.open_cov.as_slice());
        let pre = Preintegration {
            lin: self.open_lin,
            end: self.open_end,
            jac: self.open_jac,
            duration: self.open_len as f64 * self.dt,
            whitener: whitener(&((&cov + cov.transpose()) * 0.5))?,
            positions: std::mem::take(&mut self.open_positions),
        };
        let (s, c) = self.newest();
        let next = self.model.normalize(pre.predict(&self.model, &s, &c, pre.duration));
        let mut value = DVector::<f64>::zeros(NODE_DIM);
        value.rows_mut(0, 9).copy_from(&next);
        value.rows_mut(DRIFT, 3).copy_from(&c);
        self.intervals.push_back(pre);
        self.nodes.push_back(Node { step: self.step, value });
        self.open_lin = next;
        self.open_end = next;
        self.open_jac = Matrix9::identity();
        self.open_cov = Matrix9::zeros();
        self.open_positions.push(next.fixed_rows::<3>(POS).into_owned());
        self.open_len = 0;
        Ok(())
    }

    fn drift_whitener(&self, duration: f64) -> f64 {
        1.0 / (self.config.drift_random_walk * duration.sqrt())
    }

    /// Folds the oldest node into a dense prior on its successor.
    fn marginalize_old(&mut self) -> Result<(), FilterError> {
        while self.nodes.len() > 1 && self.nodes[1].step + self.window_steps <= self.step {
            let old_step = self.nodes[0].step;
            let vars = [self.nodes[0].value.clone(), self.nodes[1].value.clone()];
            let odo = OdometryFactor {
                keys: [0, 1],
                pre: &self.intervals[0],
                model: self.model,
                drift_whitener: self.drift_whitener(self.intervals[0].duration),
            };
            let mut factors: Vec<Box<dyn Factor + '_>> = vec![
                Box::new(PriorFactor {
                    key: [0],
                    mean: self.prior.mean.clone(),
                    sqrt_info: self.prior.sqrt_info.clone(),
                }),
                Box::new(odo),
            ];
            for fix in self.fixes.iter().filter(|f| f.node_step == old_step) {
                factors.push(Box::new(FixFactor { key: [0], fix, measurement: self.measurement }));
            }
            let n = NODE_DIM;
            let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
            let mut g = DVector::<f64>::zeros(2 * n);
            for f in &factors {
                let lin = f.linearize(&vars);
                for (a, ja) in f.keys().iter().zip(&lin.jacobians) {
                    let mut ga = g.rows_mut(a * n, n);
                    ga += ja.tr_mul(&lin.residual);
                    for (b, jb) in f.keys().iter().zip(&lin.jacobians) {
                        let mut hab = h.view_mut((a * n, b * n), (n, n));
                        hab += ja.tr_mul(jb);
                    }
                }
            }
            let h00 = h.view((0, 0), (n, n)).into_owned();
            let h01 = h.view((0, n), (n, n)).into_owned();
            let h11 = h.view((n, n), (n, n)).into_owned();
            let c = h00.cholesky().ok_or(FilterError::SingularInnovation)?;
            let h_m = &h11 - h01.transpose() * c.solve(&h01);
            let g_m = g.rows(n, n) - h01.transpose() * c.solve(&g.rows(0, n).into_owned());
            let h_m = (&h_m + h_m.transpose()) * 0.5;
            let cm = h_m.clone().cholesky().ok_or(FilterError::SingularInnovation)?;
            let mean = &vars[1] - cm.solve(&g_m);
            let sqrt_info = cm.l().transpose();
            drop(factors);
            self.prior = PriorFactor { key: [0], mean, sqrt_info };
            self.fixes.retain(|f| f.node_step != old_step);
            self.nodes.pop_front();
            self.intervals.pop_front();
            self.stats.marginalized += 1;
        }
        Ok(())
    }

    fn solve(&mut self) {
        let mut vars: Vec<DVector<f64>> = self.nodes.iter().map(|n| n.value.clone()).collect();
        let first = self.nodes[0].step;
        let report = {
            let mut factors: Vec<Box<dyn Factor + '_>> = Vec::with_capacity(self.nodes.len() + self.fixes.len() + 1);
            factors.push(Box::new(PriorFactor {
                key: [0],
                mean: self.prior.mean.clone(),
                sqrt_info: self.prior.sqrt_info.clone(),
            }));
            for (i, pre) in self.intervals.iter().enumerate() {
                factors.push(Box::new(OdometryFactor {
                    keys: [i, i + 1],
                    pre,
                    model: self.model,
                    drift_whitener: self.drift_whitener(pre.duration),
                }));
            }
            for fix in &self.fixes {
                let key = (fix.node_step - first) / self.node_steps;
                factors.push(Box::new(FixFactor { key: [key], fix, measurement: self.measurement }));
            }
            optimize(&mut vars, &factors, self.config.max_iterations, self.config.convergence_tol)
        };
        for (node, v) in self.nodes.iter_mut().zip(vars) {
            let mut v = v;
            let s = self.model.normalize(Vector9::from_iterator(v.rows(0, 9).iter().copied()));
            v.rows_mut(0, 9).copy_from(&s);
            node.value = v;
        }
        self.stats.optimizations += 1;
        self.stats.iterations += report.iterations as u64;
        if !report.converged {
            self.stats.non_converged += 1;
        }
        self.stats.max_dimension = self.stats.max_dimension.max(self.nodes.len() * NODE_DIM);
        self.last_report = Some(report);
    }

    /// Attaches a delayed fix and re-optimizes the window.
    pub fn deliver(&mut self, pkt: &AcousticPacket) -> Result<(), FilterError> {
        let first = self.nodes[0].step;
        if pkt.gen_step < first || pkt.gen_step > self.step {
            self.stats.rejected += 1;
            return Ok(());
        }
        let idx = (pkt.gen_step - first) / self.node_steps;
        let node_step = first + idx * self.node_steps;
        let k = pkt.gen_step - node_step;
        let positions = self.intervals.get(idx).map_or(&self.open_positions, |p| &p.positions);
        let offset = positions[k] - positions[0];
        let l = pkt.noise_cov.cholesky().ok_or(FilterError::SingularInnovation)?.l();
        let whitener = l.try_inverse().ok_or(FilterError::SingularInnovation)?;
        self.fixes.push(Fix { node_step, offset, tau: k as f64 * self.dt, z: pkt.payload, whitener });
        self.solve();
        self.refresh_head();
        Ok(())
    }

    pub fn covariance(&self) -> Option<Matrix9> {
        None
    }
}
