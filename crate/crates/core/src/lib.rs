//! Online detection of covariance change points in high-dimensional streams.
//!
//! Each new observation updates a Fisher matrix built from a frozen baseline
//! covariance and a growing monitoring covariance. The one-step change of a
//! spectral statistic `Σ f(λᵢ)` is standardized by its null mean and variance,
//! accumulated into a weighted CUSUM, and compared with a boundary calibrated
//! on weighted Brownian-motion suprema.

pub mod critval;
pub mod detect;
pub mod error;
pub mod ingest;
pub mod moments;
pub mod monitor;
pub mod quadrature;
pub mod rmt;
pub mod sim;
pub mod stream;

pub use error::{Error, Result};
pub use moments::{estimate_nu4, step_moments, step_moments_closed, step_moments_numeric, StepMoments, TestFunction};
pub use rmt::{SpectralMoments, SpectralParams, SupportEdges};
pub use stream::{LssPath, StreamState};
pub use monitor::{edd_and_power, weight_value, Monitor, MonitorConfig, MonitorOutcome, WeightFamily, WeightSpec};
pub use critval::{critical_value, CalibrationSpec, CritvalCache, Grid};
pub use detect::{change_profile, delay_regime, ChangeProfile, DelayReport};
