//! Gauge-free (natural form) covariance of camera parameters in
//! Structure-from-Motion reconstructions.
//!
//! The pipeline assembles the block-sparse projection Jacobian, builds the
//! seven-dimensional similarity nullspace, borders the Fisher information
//! matrix with it and eliminates point parameters through a Schur complement,
//! so that only a `(8n + 7)`-sized dense system is ever factorized.

pub mod covariance;
pub mod error;
pub mod nullspace;
pub mod oracle;
pub mod projection;
pub mod scene;
pub mod subrec;

pub use covariance::{compute_covariance, CovarianceResult, NaturalCovariance};
pub use error::{Error, Result};
pub use scene::{Camera, Observation, Reconstruction};
