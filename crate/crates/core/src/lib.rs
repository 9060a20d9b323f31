//! Supervised video-text step alignment and mistake detection for procedural
//! videos.
//!
//! The crate is organized bottom-up:
//!
//! * [`dataset`]: annotations, validation, group k-fold splits, agreement;
//! * [`features`]: feature matrices, binary I/O and the synthetic corpus;
//! * [`align`]: DTW and Drop-DTW with a brute-force oracle;
//! * [`model`]: the step-slot decoder, its losses, gradients and training;
//! * [`classifier`]: the segment-level mistake classifier;
//! * [`metrics`]: frame-wise metrics and step-matched mAP;
//! * [`pipeline`]: cross-validated experiments and the evaluation arms;
//! * [`report`]: CSV tables and SVG timelines.

pub mod align;
pub mod classifier;
pub mod dataset;
mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
