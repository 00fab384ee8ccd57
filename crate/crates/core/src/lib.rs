//! Artifact detection and cleaning for pulsatile physiological waveforms.
//!
//! Segments are brought to a fixed rate, standardized per segment, and
//! scored by the reconstruction error of a convolutional variational
//! autoencoder trained without labels. Segments scoring above a calibrated
//! percentile threshold, or failing coarse range and morphology rules, are
//! masked as NaN in the cleaned output.

pub mod config;
pub mod detector;
pub mod dsp;
pub mod error;
pub mod events;
pub mod eval;
pub mod heuristics;
pub mod nn;
pub mod scalar;
pub mod signal;
pub mod stream;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model used for training and inference.
pub type Vae = vae::VaeModel<f32>;
/// Double-precision model used for gradient checks.
pub type Vae64 = vae::VaeModel<f64>;
pub type Detector = detector::CalibratedDetector<f32>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
