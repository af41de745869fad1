//! Attack objectives.
//!
//! The borderline false-positive loss acts on detection confidences only:
//! detections whose best IoU against ground truth falls in `[theta_f, theta_t)`
//! contribute `-log(1 - p)`. The two comparison objectives reuse the
//! detector's own training loss.

use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::{borderline_flag, max_iou, BBox, Detection, GroundTruthSet};
use crate::image::Image;

/// Upper clamp on confidences inside `log(1 - p)`.
pub const CONFIDENCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Bfp,
    /// Detector loss against a target that labels the patch as the only object.
    Dpatch,
    /// Negated detector loss against the true ground truth.
    Maxloss,
}

/// Which way the optimizer moves along the objective gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascend,
    Descend,
}

impl LossVariant {
    /// The borderline loss is raised (it rewards confident borderline
    /// detections); the comparison objectives are minimised.
    pub fn default_direction(self) -> Direction {
        match self {
            LossVariant::Bfp => Direction::Ascend,
            LossVariant::Dpatch | LossVariant::Maxloss => Direction::Descend,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    theta_t: f64,
    theta_f: f64,
    theta_d: f64,
    pub variant: LossVariant,
}

impl LossConfig {
    /// Requires `1 > theta_t > theta_d > theta_f > 0`.
    pub fn new(theta_t: f64, theta_d: f64, theta_f: f64, variant: LossVariant) -> Result<Self> {
        let ordered = 1.0 > theta_t && theta_t > theta_d && theta_d > theta_f && theta_f > 0.0;
        if !ordered {
            return Err(Error::config(format!(
                "thresholds must satisfy 1 > theta_t > theta_d > theta_f > 0 \
                 (got theta_t={theta_t}, theta_d={theta_d}, theta_f={theta_f})"
            )));
        }
        Ok(Self {
            theta_t,
            theta_f,
            theta_d,
            variant,
        })
    }

    pub fn theta_t(&self) -> f64 {
        self.theta_t
    }

    pub fn theta_f(&self) -> f64 {
        self.theta_f
    }

    pub fn theta_d(&self) -> f64 {
        self.theta_d
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(0.6, 0.5, 0.3, LossVariant::Bfp).expect("default thresholds are ordered")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Detections inside the borderline band.
    pub active_count: usize,
    /// `d value / d confidence_j`, aligned with the input detections.
    pub confidence_grad: Vec<f64>,
}

/// `-sum_j b_j * log(1 - p_j)` with `b_j` the borderline gate on the best IoU.
/// The gate is treated as a constant.
pub fn bfp_loss(gts: &GroundTruthSet, dets: &[Detection], cfg: &LossConfig) -> Result<LossValue> {
    let mut value = 0.0;
    let mut active_count = 0;
    let mut confidence_grad = Vec::with_capacity(dets.len());
    for det in dets {
        let a = max_iou(&det.bbox, gts)?;
        if borderline_flag(a, cfg.theta_t, cfg.theta_f)? == 1 {
            let p = det.confidence().min(1.0 - CONFIDENCE_EPS);
            value -= (1.0 - p).ln();
            confidence_grad.push(1.0 / (1.0 - p));
            active_count += 1;
        } else {
            confidence_grad.push(0.0);
        }
    }
    Ok(LossValue {
        value,
        active_count,
        confidence_grad,
    })
}

/// Detector loss toward a labeling where the patch region is the sole face.
/// Returns the value and its pixel gradient.
pub fn dpatch_loss(detector: &dyn Detector, image: &Image, patch_region: BBox) -> Result<(f64, Image)> {
    detector.training_loss(image, &[patch_region])
}

/// Negated detector loss against the true faces, so that descending it
/// drives the detector's loss up.
pub fn maxloss_objective(detector: &dyn Detector, image: &Image, gts: &GroundTruthSet) -> Result<(f64, Image)> {
    let (value, mut grad) = detector.training_loss(image, &gts.boxes)?;
    grad.as_mut_slice().iter_mut().for_each(|g| *g = -*g);
    Ok((-value, grad))
}
