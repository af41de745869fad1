//! Obstruction metrics and evaluation runs: F and AP over a dataset,
//! coordinate-uniform datasets, positional TP/FN/FP heat-maps and the
//! train/test transfer table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, Shift};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::{classify, iou, Detection, GroundTruthSet, MatchOutcome};
use crate::patch::{Patch, PatchApplier, Placement};
use crate::par::{self, Exec};

/// Harmonic mean of precision `tp / (tp + fp)` and recall `tp / gt`.
///
/// Recall counts are capped at `gt` so the score stays in `[0, 1]` when
/// several detections certify the same face.
pub fn f_score(tp: usize, fp: usize, gt: usize) -> Result<f64> {
    if gt == 0 {
        return Err(Error::domain("F score needs at least one ground-truth face"));
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp.min(gt) as f64 / gt as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// All-points interpolated average precision over every detection in the
/// dataset, swept in descending confidence.
///
/// A detection is a hit when it reaches `theta_d` against any GT box of its
/// image; recall advances by the GT boxes it covers for the first time.
pub fn average_precision(per_image: &[(&[Detection], &GroundTruthSet)], theta_d: f64) -> Result<f64> {
    let total_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return Err(Error::domain("average precision needs at least one ground-truth face"));
    }
    let mut order: Vec<(usize, usize)> = per_image
        .iter()
        .enumerate()
        .flat_map(|(i, (dets, _))| (0..dets.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| {
        per_image[ib].0[jb]
            .confidence()
            .total_cmp(&per_image[ia].0[ja].confidence())
            .then((ia, ja).cmp(&(ib, jb)))
    });

    let mut covered: Vec<Vec<bool>> = per_image.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let (mut hits, mut covered_count) = (0usize, 0usize);
    let mut points = Vec::with_capacity(order.len());
    for (k, &(i, j)) in order.iter().enumerate() {
        let det = &per_image[i].0[j];
        let mut hit = false;
        for (g, flag) in per_image[i].1.boxes.iter().zip(covered[i].iter_mut()) {
            if iou(&det.bbox, g) >= theta_d {
                hit = true;
                if !*flag {
                    *flag = true;
                    covered_count += 1;
                }
            }
        }
        hits += usize::from(hit);
        points.push((covered_count as f64 / total_gt as f64, hits as f64 / (k + 1) as f64));
    }

    // Precision envelope from the right, then integrate over recall steps.
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub theta_d: f64,
    pub alpha: f64,
    pub placement: Placement,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta_d: 0.5,
            alpha: 5.58,
            placement: Placement::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub id: String,
    pub gt: GroundTruthSet,
    pub detections: Vec<Detection>,
    pub outcome: MatchOutcome,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub f_value: f64,
    pub ap: f64,
    pub gt_count: usize,
    /// Detections matching some GT box; several may share one face.
    pub tp_count: usize,
    pub fp_count: usize,
    /// Distinct GT boxes found (one-to-one tally).
    pub matched_gt_count: usize,
    pub detection_count: usize,
    pub per_image: Vec<ImageOutcome>,
}

impl EvaluationReport {
    pub fn fn_count(&self) -> usize {
        self.gt_count - self.matched_gt_count
    }
}

/// Runs the detector over every sample, optionally patched, and tallies
/// TP/FP/FN at `cfg.theta_d`.
pub fn evaluate(
    samples: &[Sample],
    patch: Option<&Patch>,
    detector: &dyn Detector,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<EvaluationReport> {
    let applier = PatchApplier::new(cfg.alpha, cfg.placement)?;
    let (per_image, failed) = par::try_map_ordered(exec, samples, |s| {
        let detections = match patch {
            Some(p) => detector.detect(&applier.apply(&s.image, &s.gt, p.pixels(), &s.mask)?.image)?,
            None => detector.detect(&s.image)?,
        };
        let outcome = classify(&detections, &s.gt, cfg.theta_d)?;
        Ok(ImageOutcome {
            id: s.id.clone(),
            gt: s.gt.clone(),
            detections,
            outcome,
        })
    });
    if !failed.is_empty() {
        return Err(Error::Dataset(
            failed
                .into_iter()
                .map(|(i, e)| format!("{}: {e}", samples[i].id))
                .collect(),
        ));
    }
    report_from_outcomes(per_image, cfg.theta_d)
}

fn report_from_outcomes(per_image: Vec<ImageOutcome>, theta_d: f64) -> Result<EvaluationReport> {
    let gt_count: usize = per_image.iter().map(|o| o.gt.len()).sum();
    let tp_count: usize = per_image.iter().map(|o| o.outcome.tp.len()).sum();
    let fp_count: usize = per_image.iter().map(|o| o.outcome.fp.len()).sum();
    let matched_gt_count: usize = per_image
        .iter()
        .map(|o| o.outcome.matched_gt_count(o.gt.len()))
        .sum();
    let detection_count = per_image.iter().map(|o| o.detections.len()).sum();
    let pairs: Vec<(&[Detection], &GroundTruthSet)> = per_image
        .iter()
        .map(|o| (o.detections.as_slice(), &o.gt))
        .collect();
    let ap = average_precision(&pairs, theta_d)?;
    Ok(EvaluationReport {
        f_value: f_score(tp_count, fp_count, gt_count)?,
        ap,
        gt_count,
        tp_count,
        fp_count,
        matched_gt_count,
        detection_count,
        per_image,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformDatasetSpec {
    pub stride: usize,
    /// Value for pixels uncovered by the shift.
    pub fill: f64,
}

impl Default for UniformDatasetSpec {
    fn default() -> Self {
        Self { stride: 25, fill: 0.0 }
    }
}

/// Grid positions visited by the face's top-left corner, row by row.
pub fn grid_positions(width: usize, height: usize, stride: usize) -> Vec<(usize, usize)> {
    (0..height)
        .step_by(stride)
        .flat_map(|y| (0..width).step_by(stride).map(move |x| (x, y)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct UniformDataset {
    pub samples: Vec<Sample>,
    /// Grid positions tried per usable source, before dropping samples
    /// without detections.
    pub candidate_positions: usize,
    pub skipped_sources: Vec<String>,
}

/// Shifts each source so its face's top-left corner visits every stride
/// position, re-detects on the shifted frame and keeps samples with at least
/// one detection (their detections become ground truth).
pub fn make_uniform_dataset(
    sources: &[Sample],
    spec: &UniformDatasetSpec,
    detector: &dyn Detector,
    exec: Exec,
) -> Result<UniformDataset> {
    if spec.stride == 0 {
        return Err(Error::config("uniform dataset stride must be >= 1"));
    }
    let mut samples = Vec::new();
    let mut skipped_sources = Vec::new();
    let mut candidate_positions = 0;
    for src in sources {
        let faces = detector.detect(&src.image)?;
        let face = match GroundTruthSet::from_detections(&src.id, &faces).largest() {
            Ok((_, b)) => *b,
            Err(_) => {
                log::warn!("{}: no face detected, skipping", src.id);
                skipped_sources.push(src.id.clone());
                continue;
            }
        };
        let (fx, fy) = face.top_left();
        let (fx, fy) = (fx.round() as i64, fy.round() as i64);
        let positions = grid_positions(src.image.width(), src.image.height(), spec.stride);
        candidate_positions = positions.len();
        let shifted = par::map_ordered(exec, &positions, |&(gx, gy)| -> Result<Option<Sample>> {
            let (tx, ty) = (gx as i64 - fx, gy as i64 - fy);
            let image = src.image.shifted(tx, ty, spec.fill);
            let mask = src.mask.shifted(tx, ty);
            let dets = detector.detect(&image)?;
            if dets.is_empty() {
                return Ok(None);
            }
            let id = format!("{}_x{gx:04}_y{gy:04}", src.id);
            let mut s = Sample::new(id.clone(), image, mask, Vec::new());
            s.gt = GroundTruthSet::from_detections(id, &dets);
            s.shift = Some(Shift {
                dx: gx as i64,
                dy: gy as i64,
                tx,
                ty,
            });
            Ok(Some(s))
        });
        for s in shifted {
            if let Some(s) = s? {
                samples.push(s);
            }
        }
    }
    Ok(UniformDataset {
        samples,
        candidate_positions,
        skipped_sources,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    #[default]
    TopLeft,
    TopRight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapConfig {
    pub eval: EvalConfig,
    /// Bin side in pixels.
    pub bin: usize,
    pub corner: Corner,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            eval: EvalConfig::default(),
            bin: 25,
            corner: Corner::TopLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Fn,
    Fp,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Tp => "tp",
            Outcome::Fn => "fn",
            Outcome::Fp => "fp",
        }
    }
}

/// TP/FN/FP counts binned by a box corner.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalGrid {
    pub bin: usize,
    pub cols: usize,
    pub rows: usize,
    /// Frame size the grid covers.
    pub width: usize,
    pub height: usize,
    pub tp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub fp: Vec<u64>,
}

impl PositionalGrid {
    fn new(width: usize, height: usize, bin: usize) -> Self {
        let cols = width.div_ceil(bin);
        let rows = height.div_ceil(bin);
        Self {
            bin,
            cols,
            rows,
            width,
            height,
            tp: vec![0; cols * rows],
            fn_: vec![0; cols * rows],
            fp: vec![0; cols * rows],
        }
    }

    pub fn grid(&self, which: Outcome) -> &[u64] {
        match which {
            Outcome::Tp => &self.tp,
            Outcome::Fn => &self.fn_,
            Outcome::Fp => &self.fp,
        }
    }

    fn cell(&self, x: f64, y: f64) -> usize {
        let cx = (x.max(0.0) as usize).min(self.width - 1) / self.bin;
        let cy = (y.max(0.0) as usize).min(self.height - 1) / self.bin;
        cy * self.cols + cx
    }

    pub fn total(&self, which: Outcome) -> u64 {
        self.grid(which).iter().sum()
    }

    /// Share of a grid's mass in each frame quadrant, ordered top-left,
    /// top-right, bottom-left, bottom-right. A bin belongs to the quadrant
    /// holding its top-left pixel. All zeros when the grid is empty.
    pub fn quadrant_fractions(&self, which: Outcome) -> [f64; 4] {
        let g = self.grid(which);
        let total: u64 = g.iter().sum();
        let mut q = [0u64; 4];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let right = usize::from(c * self.bin >= self.width.div_ceil(2));
                let bottom = usize::from(r * self.bin >= self.height.div_ceil(2));
                q[bottom * 2 + right] += g[r * self.cols + c];
            }
        }
        if total == 0 {
            return [0.0; 4];
        }
        q.map(|v| v as f64 / total as f64)
    }

    /// Grayscale heat-map, one `bin x bin` block per cell, scaled to the
    /// grid's maximum.
    pub fn render(&self, which: Outcome) -> image::GrayImage {
        let g = self.grid(which);
        let max = g.iter().copied().max().unwrap_or(0).max(1) as f64;
        image::GrayImage::from_fn((self.cols * self.bin) as u32, (self.rows * self.bin) as u32, |x, y| {
            let v = g[(y as usize / self.bin) * self.cols + x as usize / self.bin];
            image::Luma([(v as f64 / max * 255.0).round() as u8])
        })
    }

    /// `kind,row,col,x,y,count` for every cell of all three grids.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kind", "row", "col", "x", "y", "count"])?;
        for which in [Outcome::Tp, Outcome::Fn, Outcome::Fp] {
            for (i, v) in self.grid(which).iter().enumerate() {
                let (r, c) = (i / self.cols, i % self.cols);
                w.write_record([
                    which.name().to_string(),
                    r.to_string(),
                    c.to_string(),
                    (c * self.bin).to_string(),
                    (r * self.bin).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `tp.png`, `fn.png`, `fp.png` and `grids.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for which in [Outcome::Tp, Outcome::Fn, Outcome::Fp] {
            let path = dir.join(format!("{}.png", which.name()));
            self.render(which).save(&path).map_err(|source| Error::Image { path, source })?;
        }
        self.write_csv(&dir.join("grids.csv"))
    }
}

/// Bins TP and FP by the detection corner and FN by the GT corner.
pub fn positional_heatmaps(
    samples: &[Sample],
    patch: Option<&Patch>,
    detector: &dyn Detector,
    cfg: &HeatmapConfig,
    exec: Exec,
) -> Result<PositionalGrid> {
    if samples.is_empty() {
        return Err(Error::domain("heat-maps need a non-empty manifest"));
    }
    if cfg.bin == 0 {
        return Err(Error::config("heat-map bin must be >= 1"));
    }
    let report = evaluate(samples, patch, detector, &cfg.eval, exec)?;
    let width = samples.iter().map(|s| s.image.width()).max().unwrap_or(1);
    let height = samples.iter().map(|s| s.image.height()).max().unwrap_or(1);
    let mut grid = PositionalGrid::new(width, height, cfg.bin);
    let corner = |b: &crate::geometry::BBox| match cfg.corner {
        Corner::TopLeft => b.top_left(),
        Corner::TopRight => b.top_right(),
    };
    for o in &report.per_image {
        for &(j, _) in &o.outcome.tp {
            let (x, y) = corner(&o.detections[j].bbox);
            let c = grid.cell(x, y);
            grid.tp[c] += 1;
        }
        for &j in &o.outcome.fp {
            let (x, y) = corner(&o.detections[j].bbox);
            let c = grid.cell(x, y);
            grid.fp[c] += 1;
        }
        for &k in &o.outcome.fn_ {
            let (x, y) = corner(&o.gt.boxes[k]);
            let c = grid.cell(x, y);
            grid.fn_[c] += 1;
        }
    }
    Ok(grid)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub model: String,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "GT")]
    pub gt: usize,
    #[serde(rename = "TP")]
    pub tp: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
}

impl ReportRow {
    pub fn from_report(dataset: &str, method: &str, model: &str, r: &EvaluationReport) -> Self {
        Self {
            dataset: dataset.into(),
            method: method.into(),
            model: model.into(),
            f: r.f_value,
            ap: r.ap,
            gt: r.gt_count,
            tp: r.tp_count,
            fp: r.fp_count,
        }
    }
}

/// Header is `dataset,method,model,F,AP,GT,TP,FP`.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["dataset", "method", "model", "F", "AP", "GT", "TP", "FP"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// A trained patch and the name of the dataset it was trained on.
pub struct TransferRun<'a> {
    pub method: String,
    pub train_dataset: String,
    pub patch: &'a Patch,
}

/// Every (run, test dataset, detector) combination, in that nesting order.
pub fn transfer_matrix(
    runs: &[TransferRun<'_>],
    test_sets: &[(String, &[Sample])],
    detectors: &[&dyn Detector],
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for run in runs {
        for (test_name, samples) in test_sets {
            for det in detectors {
                let report = evaluate(samples, Some(run.patch), *det, cfg, exec)?;
                rows.push(ReportRow::from_report(
                    &format!("{}/{}", run.train_dataset, test_name),
                    &run.method,
                    &det.handle().name,
                    &report,
                ));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectorHandle, ToyDetector};
    use crate::geometry::BBox;
    use crate::image::{ForegroundMask, Image};
    use crate::synth::{self, SceneSpec};
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, s: f64) -> BBox {
        BBox::new(x, y, s, s).unwrap()
    }

    fn det(p: f64, b: BBox) -> Detection {
        Detection::new(p, b).unwrap()
    }

    #[test]
    fn f_score_examples() {
        assert!((f_score(2977, 0, 3000).unwrap() - 0.996).abs() < 1e-3);
        assert!((f_score(1967, 7, 3000).unwrap() - 0.791).abs() < 1e-3);
        assert_eq!(f_score(3000, 0, 3000).unwrap(), 1.0);
        assert_eq!(f_score(0, 12, 3000).unwrap(), 0.0);
        assert!(f_score(1, 0, 0).is_err());
    }

    #[test]
    fn ap_examples() {
        let g = GroundTruthSet::new("a", vec![bx(10.0, 10.0, 4.0)]);
        let hit = [det(0.9, bx(10.0, 10.0, 4.0))];
        assert_eq!(average_precision(&[(&hit, &g)], 0.5).unwrap(), 1.0);
        let miss = [det(0.9, bx(40.0, 40.0, 4.0))];
        assert_eq!(average_precision(&[(&miss, &g)], 0.5).unwrap(), 0.0);

        // Two images, one face each: 0.9 TP, 0.8 FP, 0.7 TP.
        let g2 = GroundTruthSet::new("b", vec![bx(50.0, 50.0, 4.0)]);
        let d1 = [det(0.9, bx(10.0, 10.0, 4.0)), det(0.8, bx(30.0, 30.0, 4.0))];
        let d2 = [det(0.7, bx(50.0, 50.0, 4.0))];
        let ap = average_precision(&[(&d1, &g), (&d2, &g2)], 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!(average_precision(&[(&d1, &GroundTruthSet::default())], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn ap_never_rises_with_a_lowest_fp(
            items in proptest::collection::vec((0.01..1.0f64, 0.0..30.0f64), 1..10),
        ) {
            let g = GroundTruthSet::new("a", vec![bx(10.0, 10.0, 8.0)]);
            let dets: Vec<Detection> = items.iter().map(|&(p, x)| det(p, bx(10.0 + x, 10.0, 8.0))).collect();
            let base = average_precision(&[(&dets, &g)], 0.5).unwrap();
            let mut more = dets.clone();
            more.push(det(0.001, bx(200.0, 200.0, 8.0)));
            let after = average_precision(&[(&more, &g)], 0.5).unwrap();
            prop_assert!(after <= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }

    fn toy_set(n: usize, seed: u64) -> Vec<Sample> {
        let det = ToyDetector::default();
        let raw = synth::generate(&SceneSpec::default(), n, seed).unwrap();
        synth::label_with_detector(raw, &det, Exec::Parallel).unwrap().0
    }

    #[test]
    fn clean_evaluation_is_perfect_and_deterministic() {
        let det = ToyDetector::default();
        let set = toy_set(40, 2);
        let r = evaluate(&set, None, &det, &EvalConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(r.tp_count, r.gt_count);
        assert_eq!(r.fp_count, 0);
        assert_eq!(r.f_value, 1.0);
        assert_eq!(r.tp_count + r.fp_count, r.detection_count);
        let again = evaluate(&set, None, &det, &EvalConfig::default(), Exec::Sequential).unwrap();
        assert_eq!((again.tp_count, again.fp_count, again.ap), (r.tp_count, r.fp_count, r.ap));
    }

    #[test]
    fn invisible_patch_matches_no_patch() {
        let det = ToyDetector::default();
        let mut set = toy_set(20, 3);
        for s in &mut set {
            s.mask = ForegroundMask::filled(s.image.width(), s.image.height(), 1.0);
        }
        let cfg = EvalConfig::default();
        let none = evaluate(&set, None, &det, &cfg, Exec::Parallel).unwrap();
        let gray = evaluate(&set, Some(&Patch::gray(16, 16, 1)), &det, &cfg, Exec::Parallel).unwrap();
        assert_eq!((none.tp_count, none.fp_count, none.ap), (gray.tp_count, gray.fp_count, gray.ap));
    }

    #[test]
    fn evaluation_failures_list_offenders() {
        let det = ToyDetector::default();
        let mut set = toy_set(3, 4);
        set[1].mask = ForegroundMask::filled(3, 3, 0.0);
        match evaluate(&set, Some(&Patch::gray(8, 8, 1)), &det, &EvalConfig::default(), Exec::Parallel) {
            Err(Error::Dataset(list)) => {
                assert_eq!(list.len(), 1);
                assert!(list[0].starts_with(&set[1].id));
            }
            other => panic!("{:?}", other.map(|r| r.tp_count)),
        }
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_positions(100, 100, 25).len(), 16);
        assert_eq!(grid_positions(100, 100, 100).len(), 1);
        assert_eq!(grid_positions(64, 64, 8).len(), 64);
        assert_eq!(grid_positions(10, 7, 3).len(), 4 * 3);
    }

    /// Reports every GT box as a detection, or nothing.
    struct Scripted {
        handle: DetectorHandle,
        succeed: bool,
    }

    impl Scripted {
        fn new(succeed: bool) -> Self {
            Self {
                handle: DetectorHandle {
                    name: "scripted".into(),
                    supports_gradients: false,
                    supports_training_loss: false,
                    confidence_threshold: 0.5,
                    nms_threshold: 0.3,
                },
                succeed,
            }
        }
    }

    impl Detector for Scripted {
        fn handle(&self) -> &DetectorHandle {
            &self.handle
        }

        fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
            // The face is the only pixel block brighter than 0.5.
            if !self.succeed {
                return Ok(Vec::new());
            }
            let (w, h, _) = image.dims();
            let (mut l, mut t, mut r, mut b) = (usize::MAX, usize::MAX, 0, 0);
            for y in 0..h {
                for x in 0..w {
                    if image.get(x, y, 0) > 0.5 {
                        l = l.min(x);
                        t = t.min(y);
                        r = r.max(x + 1);
                        b = b.max(y + 1);
                    }
                }
            }
            if r == 0 {
                return Ok(Vec::new());
            }
            Ok(vec![det(0.99, BBox::from_corners(l as f64, t as f64, r as f64, b as f64)?)])
        }
    }

    fn uniform_sources(n: usize) -> Vec<Sample> {
        let spec = SceneSpec {
            width: 100,
            height: 100,
            ..SceneSpec::default()
        };
        synth::generate(&spec, n, 9).unwrap()
    }

    #[test]
    fn uniform_dataset_shifts_are_on_the_grid() {
        let det = Scripted::new(true);
        let sources = uniform_sources(10);
        let out = make_uniform_dataset(&sources, &UniformDatasetSpec::default(), &det, Exec::Parallel).unwrap();
        assert_eq!(out.candidate_positions, 16);
        assert!(!out.samples.is_empty());
        for s in &out.samples {
            let sh = s.shift.unwrap();
            assert_eq!(sh.dx % 25, 0);
            assert_eq!(sh.dy % 25, 0);
            // Fully visible faces land exactly on their grid point.
            let (x, y) = s.gt.boxes[0].top_left();
            if s.gt.boxes[0].w() >= 10.0 && s.gt.boxes[0].h() >= 10.0 {
                assert_eq!((x as i64, y as i64), (sh.dx, sh.dy));
            }
        }

        let whole = UniformDatasetSpec { stride: 100, fill: 0.0 };
        let one = make_uniform_dataset(&sources[..1], &whole, &det, Exec::Parallel).unwrap();
        assert_eq!(one.candidate_positions, 1);
        assert_eq!(one.samples.len(), 1);

        let blind = Scripted::new(false);
        let none = make_uniform_dataset(&sources[..2], &UniformDatasetSpec::default(), &blind, Exec::Parallel).unwrap();
        assert_eq!(none.skipped_sources.len(), 2);
        assert!(none.samples.is_empty());
    }

    #[test]
    fn heatmaps_conserve_counts() {
        let sources = uniform_sources(2);
        let ok = Scripted::new(true);
        let set = make_uniform_dataset(&sources, &UniformDatasetSpec::default(), &ok, Exec::Parallel)
            .unwrap()
            .samples;
        let cfg = HeatmapConfig::default();
        let grid = positional_heatmaps(&set, None, &ok, &cfg, Exec::Parallel).unwrap();
        assert_eq!(grid.total(Outcome::Fn), 0);
        assert_eq!(grid.total(Outcome::Tp), set.len() as u64);

        let blind = Scripted::new(false);
        let grid = positional_heatmaps(&set, None, &blind, &cfg, Exec::Parallel).unwrap();
        assert_eq!(grid.total(Outcome::Fn), set.len() as u64);
        assert_eq!(grid.total(Outcome::Tp), 0);
        let q = grid.quadrant_fractions(Outcome::Fn);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(positional_heatmaps(&[], None, &ok, &cfg, Exec::Parallel).is_err());

        let dir = tempfile::tempdir().unwrap();
        grid.write_all(dir.path()).unwrap();
        for f in ["tp.png", "fn.png", "fp.png", "grids.csv"] {
            assert!(dir.path().join(f).exists());
        }
        let csv_text = std::fs::read_to_string(dir.path().join("grids.csv")).unwrap();
        assert_eq!(csv_text.lines().count(), 1 + 3 * grid.cols * grid.rows);
    }

    #[test]
    fn top_right_corner_bins_differently() {
        let sources = uniform_sources(1);
        let ok = Scripted::new(true);
        let set = make_uniform_dataset(&sources, &UniformDatasetSpec::default(), &ok, Exec::Parallel)
            .unwrap()
            .samples;
        let left_cfg = HeatmapConfig {
            bin: 5,
            ..HeatmapConfig::default()
        };
        let left = positional_heatmaps(&set, None, &ok, &left_cfg, Exec::Parallel).unwrap();
        let right_cfg = HeatmapConfig {
            corner: Corner::TopRight,
            ..left_cfg
        };
        let right = positional_heatmaps(&set, None, &ok, &right_cfg, Exec::Parallel).unwrap();
        assert_eq!(left.total(Outcome::Tp), right.total(Outcome::Tp));
        assert_ne!(left.tp, right.tp);
    }

    #[test]
    fn report_csv_layout_and_transfer() {
        let det = ToyDetector::default();
        let set = toy_set(10, 5);
        let patch = Patch::gray(16, 16, 1);
        let cfg = EvalConfig::default();
        let rows = transfer_matrix(
            &[TransferRun {
                method: "proposed".into(),
                train_dataset: "syn".into(),
                patch: &patch,
            }],
            &[("syn".to_string(), set.as_slice())],
            &[&det],
            &cfg,
            Exec::Parallel,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        let direct = evaluate(&set, Some(&patch), &det, &cfg, Exec::Parallel).unwrap();
        assert_eq!(rows[0], ReportRow::from_report("syn/syn", "proposed", "toy", &direct));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "dataset,method,model,F,AP,GT,TP,FP");
        assert_eq!(read_report_csv(&path).unwrap(), rows);
    }
}
