//! Boxes, detections and the IoU-threshold matching that both the loss and
//! the metrics are built on.
//!
//! Boxes are stored center-format `(x, y, w, h)`; all overlap arithmetic is
//! done on corners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center format. Width and height are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        // NaN fails both comparisons.
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() || !w.is_finite() || !h.is_finite()
        {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from its `(left, top, right, bottom)` corners.
    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        Self::new(
            0.5 * (left + right),
            0.5 * (top + bottom),
            right - left,
            bottom - top,
        )
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(left, top, right, bottom)`.
    pub fn corners(&self) -> [f64; 4] {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        [self.x - hw, self.y - hh, self.x + hw, self.y + hh]
    }

    pub fn top_left(&self) -> (f64, f64) {
        (self.x - 0.5 * self.w, self.y - 0.5 * self.h)
    }

    pub fn top_right(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y - 0.5 * self.h)
    }

    /// Same extent, moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let [al, at, ar, ab] = a.corners();
    let [bl, bt, br, bb] = b.corners();
    let iw = (ar.min(br) - al.max(bl)).max(0.0);
    let ih = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One detector output: a confidence and a center-format box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(confidence: f64, bbox: BBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::domain(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { confidence, bbox })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Wire form of a detection: one JSON object `{"p", "x", "y", "w", "h"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(default = "one")]
    pub p: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

fn one() -> f64 {
    1.0
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            p: d.confidence,
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
        }
    }
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = Error;

    fn try_from(r: DetectionRecord) -> Result<Self> {
        Detection::new(r.p, BBox::new(r.x, r.y, r.w, r.h)?)
    }
}

/// Ground-truth face boxes for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    pub image_id: String,
    pub boxes: Vec<BBox>,
}

impl GroundTruthSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BBox>) -> Self {
        Self {
            image_id: image_id.into(),
            boxes,
        }
    }

    /// Ground truth taken from a detector's own output on the clean image.
    pub fn from_detections(image_id: impl Into<String>, dets: &[Detection]) -> Self {
        Self::new(image_id, dets.iter().map(|d| d.bbox).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    /// Index of the box with the largest area; the first one wins ties.
    pub fn largest(&self) -> Result<(usize, &BBox)> {
        let mut best: Option<(usize, &BBox)> = None;
        for (k, b) in self.boxes.iter().enumerate() {
            match best {
                Some((_, cur)) if cur.area() >= b.area() => {}
                _ => best = Some((k, b)),
            }
        }
        best.ok_or(Error::EmptyGroundTruth)
    }
}

/// Result of classifying detections against ground truth.
///
/// Matching is existential, not one-to-one: one GT box may certify several
/// true positives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    /// `(detection index, best-matching GT index)`.
    pub tp: Vec<(usize, usize)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
    /// Per detection, the maximum IoU over all GT boxes (0 without GT).
    pub per_detection_max_iou: Vec<f64>,
}

impl MatchOutcome {
    /// Number of distinct GT boxes covered by at least one true positive.
    pub fn matched_gt_count(&self, gt_len: usize) -> usize {
        gt_len - self.fn_.len()
    }
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Splits detections into TP/FP and GT boxes into FN at IoU threshold `theta_d`.
pub fn classify(dets: &[Detection], gts: &GroundTruthSet, theta_d: f64) -> Result<MatchOutcome> {
    check_unit_open("theta_d", theta_d)?;
    let mut out = MatchOutcome::default();
    let mut gt_hit = vec![false; gts.len()];
    for (j, det) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gts.boxes.iter().enumerate() {
            let v = iou(&det.bbox, g);
            if v >= theta_d {
                gt_hit[k] = true;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        let a = best.map_or(0.0, |(_, v)| v);
        out.per_detection_max_iou.push(a);
        match best {
            Some((k, v)) if v >= theta_d => out.tp.push((j, k)),
            _ => out.fp.push(j),
        }
    }
    out.fn_ = gt_hit
        .iter()
        .enumerate()
        .filter(|(_, hit)| !**hit)
        .map(|(k, _)| k)
        .collect();
    Ok(out)
}

/// Maximum IoU between a box and any GT box.
pub fn max_iou(det: &BBox, gts: &GroundTruthSet) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    Ok(gts.boxes.iter().map(|g| iou(g, det)).fold(0.0, f64::max))
}

/// Borderline gate: 1 on `[theta_f, theta_t)`, 0 elsewhere.
pub fn borderline_flag(a: f64, theta_t: f64, theta_f: f64) -> Result<u8> {
    if theta_t <= theta_f {
        return Err(Error::config(format!(
            "theta_t ({theta_t}) must exceed theta_f ({theta_f})"
        )));
    }
    Ok(u8::from(a < theta_t && a >= theta_f))
}

/// Greedy non-maximum suppression. Returns kept indices in descending
/// confidence order; equal confidences keep input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}
