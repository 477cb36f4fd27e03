//! Ambient-light side-channel PIN inference.
//!
//! The pipeline runs in five stages, one module each:
//!
//! * [`trace`]: timestamped light samples, tap events, the session file format
//!   and extraction of labeled PIN windows.
//! * [`synth`]: seeded synthetic sessions where small device tilts modulate the
//!   received illuminance, plus decimation and quantization of existing traces.
//! * [`features`]: per-window normalization and the three feature families
//!   (lux at taps, lux+RGBW at taps, cubic-fit coefficients).
//! * [`classify`]: softmax regression, linear discriminant analysis and k-NN
//!   behind one [`classify::Classifier`] trait, selected by name from a registry.
//! * [`eval`]: stratified k-fold cross-validation, top-N guess curves and
//!   paired comparisons.

pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
