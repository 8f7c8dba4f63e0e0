//! Sliding-window Gaussian process regression of the unmodeled NED velocity
//! residual.
//!
//! Subset-of-data sparsity: only the newest `capacity` samples are kept, so a
//! prediction costs O(W^2) against a cached Cholesky factor of the Gram
//! matrix. The three output axes share one squared-exponential kernel.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::models::NavState;

/// Reciprocal-condition floor below which the Gram factor is not trusted.
pub const MIN_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpHyperparams {
    /// Signal std, m/s.
    pub sigma_f: f64,
    /// Isotropic length scale in feature units.
    pub length_scale: f64,
    /// Observation noise std, m/s.
    pub sigma_n: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self { sigma_f: 0.3, length_scale: 1.0, sigma_n: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("GP hyperparameter `{0}` must be finite and strictly positive")]
pub struct GpError(pub &'static str);

impl GpHyperparams {
    pub fn validate(&self) -> Result<(), GpError> {
        for (name, v) in [("sigma_f", self.sigma_f), ("length_scale", self.length_scale), ("sigma_n", self.sigma_n)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GpError(name));
            }
        }
        Ok(())
    }

    pub fn prior_variance(&self) -> f64 {
        self.sigma_f * self.sigma_f
    }
}

/// Squared-exponential kernel `sigma_f^2 exp(-|a-b|^2 / 2 l^2)`.
pub fn kernel<const D: usize>(a: &SVector<f64, D>, b: &SVector<f64, D>, hp: &GpHyperparams) -> f64 {
    let r2 = (a - b).norm_squared();
    hp.prior_variance() * (-0.5 * r2 / (hp.length_scale * hp.length_scale)).exp()
}

/// Maps a navigation state to the regression input.
///
/// Heading enters as a scaled unit vector so the feature is continuous
/// across the +-pi seam; body velocity is divided by `speed_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMap {
    pub heading_weight: f64,
    /// m/s.
    pub speed_scale: f64,
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self { heading_weight: 0.25, speed_scale: 1.5 }
    }
}

pub const FEATURE_DIM: usize = 5;
pub type Feature = SVector<f64, FEATURE_DIM>;

impl FeatureMap {
    pub fn features(&self, state: &NavState) -> Feature {
        let (s, c) = state.attitude.z.sin_cos();
        let v = state.velocity / self.speed_scale;
        Feature::from([self.heading_weight * c, self.heading_weight * s, v.x, v.y, v.z])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    /// NED residual velocity, m/s.
    pub mean: Vector3<f64>,
    /// Per-axis predictive variance, (m/s)^2.
    pub variance: f64,
    /// True when the Gram factorization failed and the prior was returned.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
struct Factor {
    chol: DMatrix<f64>,
    /// `(K + sigma_n^2 I)^-1 Y`, one column per output axis.
    alpha: DMatrix<f64>,
}

/// FIFO training window with a cached factorization.
#[derive(Debug, Clone)]
pub struct GpWindow<const D: usize> {
    capacity: usize,
    hp: GpHyperparams,
    xs: VecDeque<SVector<f64, D>>,
    ys: VecDeque<Vector3<f64>>,
    factor: Option<Factor>,
    degraded: bool,
}

impl<const D: usize> GpWindow<D> {
    pub fn new(capacity: usize, hp: GpHyperparams) -> Result<Self, GpError> {
        hp.validate()?;
        if capacity == 0 {
            return Err(GpError("capacity"));
        }
        Ok(Self {
            capacity,
            hp,
            xs: VecDeque::with_capacity(capacity + 1),
            ys: VecDeque::with_capacity(capacity + 1),
            factor: None,
            degraded: false,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &SVector<f64, D>> {
        self.xs.iter()
    }

    pub fn targets(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.ys.iter()
    }

    /// True when the last refit fell back to the prior.
    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// Appends a sample, evicting the oldest beyond capacity, and refits.
    pub fn observe(&mut self, x: SVector<f64, D>, y: Vector3<f64>) {
        self.xs.push_back(x);
        self.ys.push_back(y);
        if self.xs.len() > self.capacity {
            self.xs.pop_front();
            self.ys.pop_front();
        }
        self.refit();
    }

    pub fn clear(&mut self) {
        self.xs.clear();
        self.ys.clear();
        self.factor = None;
        self.degraded = false;
    }

    fn refit(&mut self) {
        let n = self.xs.len();
        let noise = self.hp.sigma_n * self.hp.sigma_n;
        let gram = DMatrix::from_fn(n, n, |i, j| {
            kernel(&self.xs[i], &self.xs[j], &self.hp) + if i == j { noise } else { 0.0 }
        });
        let y = DMatrix::from_fn(n, 3, |i, j| self.ys[i][j]);
        self.factor = gram.cholesky().and_then(|c| {
            let l = c.l();
            let d = l.diagonal();
            let rcond = (d.min() / d.max()).powi(2);
            (rcond >= MIN_RCOND).then(|| Factor { alpha: c.solve(&y), chol: l })
        });
        self.degraded = self.factor.is_none();
    }

    pub fn predict(&self, x_star: &SVector<f64, D>) -> GpPrediction {
        let prior = self.hp.prior_variance();
        let Some(f) = self.factor.as_ref() else {
            return GpPrediction { mean: Vector3::zeros(), variance: prior, degraded: self.degraded };
        };
        let k_star = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| kernel(x, x_star, &self.hp)));
        let m = f.alpha.tr_mul(&k_star);
        let v = f.chol.solve_lower_triangular(&k_star).expect("Cholesky factor has a positive diagonal");
        let variance = (prior - v.norm_squared()).clamp(0.0, prior);
        GpPrediction { mean: Vector3::new(m[0], m[1], m[2]), variance, degraded: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type F3 = SVector<f64, 3>;

    fn hp() -> GpHyperparams {
        GpHyperparams::default()
    }

    /// Textbook GP posterior by LU solves against the assembled Gram matrix.
    fn dense_oracle(xs: &[F3], ys: &[Vector3<f64>], hp: &GpHyperparams, q: &F3) -> (Vector3<f64>, f64) {
        let n = xs.len();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let r2: f64 = (0..3).map(|c| (xs[i][c] - xs[j][c]).powi(2)).sum();
                k[(i, j)] = hp.sigma_f.powi(2) * (-r2 / (2.0 * hp.length_scale.powi(2))).exp();
            }
            k[(i, i)] += hp.sigma_n.powi(2);
        }
        let ks = DVector::from_fn(n, |i, _| {
            let r2: f64 = (0..3).map(|c| (xs[i][c] - q[c]).powi(2)).sum();
            hp.sigma_f.powi(2) * (-r2 / (2.0 * hp.length_scale.powi(2))).exp()
        });
        let lu = k.lu();
        let w = lu.solve(&ks).unwrap();
        let mut mean = Vector3::zeros();
        for a in 0..3 {
            let col = DVector::from_fn(n, |i, _| ys[i][a]);
            mean[a] = w.dot(&col);
        }
        (mean, hp.sigma_f.powi(2) - ks.dot(&w))
    }

    #[test]
    fn kernel_closed_forms() {
        let a = F3::new(0.3, -1.0, 2.0);
        assert_abs_diff_eq!(kernel(&a, &a, &hp()), 0.09, epsilon = 1e-15);
        let b = a + F3::new(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(kernel(&a, &b, &hp()), 0.09 * (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(kernel(&a, &b, &hp()), kernel(&b, &a, &hp()));
        assert!(kernel(&a, &(a * 1e3), &hp()) < 1e-300);
    }

    #[test]
    fn fifo_eviction_keeps_newest() {
        let mut w = GpWindow::<3>::new(50, hp()).unwrap();
        for i in 0..51 {
            w.observe(F3::repeat(i as f64), Vector3::zeros());
        }
        assert_eq!(w.len(), 50);
        let xs: Vec<_> = w.inputs().map(|x| x[0]).collect();
        assert!(!xs.contains(&0.0));
        assert!(xs.contains(&50.0));
    }

    #[test]
    fn duplicates_are_retained() {
        let mut w = GpWindow::<3>::new(10, hp()).unwrap();
        w.observe(F3::zeros(), Vector3::x());
        w.observe(F3::zeros(), Vector3::x());
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn empty_window_returns_prior() {
        let w = GpWindow::<3>::new(10, hp()).unwrap();
        let p = w.predict(&F3::zeros());
        assert_eq!(p.mean, Vector3::zeros());
        assert_eq!(p.variance, 0.09);
        assert!(!p.degraded);
    }

    #[test]
    fn interpolates_in_the_noiseless_limit() {
        let h = GpHyperparams { sigma_n: 1e-6, ..hp() };
        let mut w = GpWindow::<3>::new(10, h).unwrap();
        let y0 = Vector3::new(0.2, -0.1, 0.05);
        w.observe(F3::new(1.0, 2.0, 3.0), y0);
        let p = w.predict(&F3::new(1.0, 2.0, 3.0));
        assert_abs_diff_eq!(p.mean, y0, epsilon = 1e-9);
        assert!(p.variance < 1e-9);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let mut w = GpWindow::<3>::new(10, hp()).unwrap();
        w.observe(F3::zeros(), Vector3::new(0.3, 0.3, 0.3));
        let p = w.predict(&F3::repeat(100.0));
        assert!(p.mean.amax() < 1e-6);
        assert_abs_diff_eq!(p.variance, 0.09, epsilon = 1e-6);
    }

    #[test]
    fn matches_dense_oracle_for_every_window_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = GpHyperparams { sigma_f: 0.3, length_scale: 1.0, sigma_n: 0.05 };
        let mut w = GpWindow::<3>::new(50, h).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..50 {
            let x = F3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let y = Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
            xs.push(x);
            ys.push(y);
            w.observe(x, y);
            for _ in 0..5 {
                let q = F3::from_fn(|_, _| rng.gen_range(-2.5..2.5));
                let (m, v) = dense_oracle(&xs, &ys, &h, &q);
                let p = w.predict(&q);
                assert!((p.mean - m).amax() < 1e-10, "n={} {:e}", xs.len(), (p.mean - m).amax());
                assert!((p.variance - v).abs() < 1e-10);
                assert!(p.variance <= h.prior_variance() && p.variance >= 0.0);
            }
        }
    }

    #[test]
    fn ill_conditioned_gram_falls_back_to_prior() {
        let h = GpHyperparams { sigma_f: 1.0, length_scale: 1.0, sigma_n: 1e-9 };
        let mut w = GpWindow::<3>::new(10, h).unwrap();
        w.observe(F3::zeros(), Vector3::x());
        w.observe(F3::zeros(), Vector3::x());
        assert!(w.is_degraded());
        let p = w.predict(&F3::zeros());
        assert!(p.degraded);
        assert_eq!(p.mean, Vector3::zeros());
        assert_eq!(p.variance, 1.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(GpWindow::<3>::new(10, GpHyperparams { sigma_n: 0.0, ..hp() }).is_err());
        assert!(GpWindow::<3>::new(0, hp()).is_err());
    }

    #[test]
    fn heading_feature_is_continuous_across_the_seam() {
        let fm = FeatureMap::default();
        let s = |psi: f64| NavState::new(Vector3::zeros(), Vector3::new(1.5, 0.0, 0.0), Vector3::new(0.0, 0.0, psi));
        let a = fm.features(&s(std::f64::consts::PI - 1e-9));
        let b = fm.features(&s(-std::f64::consts::PI + 1e-9));
        assert!((a - b).amax() < 1e-8);
        assert_abs_diff_eq!(a[2], 1.0, epsilon = 1e-12);
    }
}
