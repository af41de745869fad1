//! Face-detector contract.
//!
//! A detector maps an image to a list of [`Detection`]s. Detectors that can
//! be trained against additionally expose pixel gradients
//! ([`Detector::detect_with_gradients`]) and, for the loss-maximisation
//! baselines, their own training loss ([`Detector::training_loss`]).

mod external;
mod toy;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use external::{ExternalDetector, DETECTOR_DIR_ENV};
pub use toy::{ToyDetector, ToyDetectorSpec};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHandle {
    pub name: String,
    pub supports_gradients: bool,
    pub supports_training_loss: bool,
    pub confidence_threshold: f64,
    pub nms_threshold: f64,
}

/// Which candidate set feeds a gradient-based loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionTap {
    /// Raw candidates before suppression.
    PreNms,
    /// Candidates after suppression, before confidence thresholding.
    #[default]
    PostNms,
}

/// Upstream gradient for one detection.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectionSeed {
    pub confidence: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Back-propagates detection-space gradients to the input pixels.
pub trait GradientContext: Send + Sync {
    /// `seeds[j]` is `d loss / d detection j`; returns `d loss / d pixels` in
    /// the input image layout.
    fn backward(&self, seeds: &[DetectionSeed]) -> Result<Image>;
}

pub struct GradDetections {
    pub detections: Vec<Detection>,
    pub context: Box<dyn GradientContext>,
}

pub trait Detector: Send + Sync {
    fn handle(&self) -> &DetectorHandle;

    /// Thresholded, suppressed detections.
    fn detect(&self, image: &Image) -> Result<Vec<Detection>>;

    fn detect_with_gradients(&self, _image: &Image, _tap: DetectionTap) -> Result<GradDetections> {
        Err(Error::Unsupported {
            detector: self.handle().name.clone(),
            capability: "gradients",
        })
    }

    /// Detector-native loss against `target` and its pixel gradient.
    fn training_loss(&self, _image: &Image, _target: &[BBox]) -> Result<(f64, Image)> {
        Err(Error::Unsupported {
            detector: self.handle().name.clone(),
            capability: "training loss",
        })
    }
}

/// Resolves a detector by name: `toy` is built in, anything else is looked
/// up as an external adapter.
pub fn by_name(name: &str) -> Result<Arc<dyn Detector>> {
    match name {
        "toy" => Ok(Arc::new(ToyDetector::default())),
        other => Ok(Arc::new(ExternalDetector::locate(other)?)),
    }
}
