//! Relative pose estimation of a tumbling target from camera marker
//! detections, using an unscented Kalman filter with innovation-based
//! measurement-noise inflation and cross-covariance process-noise adaptation.

pub mod adaptation;
pub mod association;
pub mod camera;
pub mod config;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod ukf;

pub use error::{Error, Result};
