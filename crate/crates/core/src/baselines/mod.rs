//! Comparison estimators: delay-ignorant EKF and UKF, augmented-state EKF and
//! a sliding-window factor-graph smoother.

pub mod augekf;
pub mod ekf;
pub mod fgo;
pub mod ukf;

pub use augekf::{AugEkf, AugEkfConfig, NavAugEkf};
pub use ekf::{Ekf, IgnorantEkf};
pub use fgo::{FgoConfig, FgoNavigator};
pub use ukf::{IgnorantUkf, Ukf, UtParams};
