//! Binned solar-power classification with source-free domain adaptation.
//!
//! The crate trains a small convolutional classifier that maps weather
//! features to binned power output for one location, then adapts that model
//! to a new location using only the new location's data: a frozen-at-start
//! teacher produces soft targets for a student, the student minimizes a
//! consistency loss plus a masked cross-entropy on whatever small labeled
//! fraction exists, and the teacher trails the student through an
//! exponential moving average. The adapted model returned to callers is the
//! teacher.
//!
//! Modules:
//! - [`tensor`]: flat row-major `f64` tensors.
//! - [`nn`]: layers, the network container, losses, gradient checking.
//! - [`optim`]: Adam and the teacher EMA update.
//! - [`data`]: CSV ingestion, resampling, binning, splits, synthetic data.
//! - [`forest`]: random-forest feature selection and baseline.
//! - [`train`]: supervised source training and evaluation.
//! - [`adapt`]: the teacher-student adaptation loop.

pub mod adapt;
pub mod data;
pub mod error;
pub mod forest;
pub mod nn;
pub mod optim;
pub(crate) mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
