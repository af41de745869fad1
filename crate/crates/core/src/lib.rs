//! Borderline false-positive patch attacks on face detectors: geometry,
//! patch placement, objectives, optimizer and evaluation harness.

pub mod error;
pub mod geometry;
pub mod image;
pub mod detector;
pub mod patch;
pub mod loss;
pub mod par;
pub mod dataset;
pub mod synth;
pub mod eval;
pub mod checkpoint;
pub mod optimizer;

pub use error::{Error, Result};
