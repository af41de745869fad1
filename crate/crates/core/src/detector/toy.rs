//! Multi-scale center-surround window detector.
//!
//! Each window scores `mean(inner square) - softmax(mean of each side strip)`
//! on the luminance channel, squashed by a logistic into a confidence. Using
//! the brightest side rather than the whole ring keeps sub-windows of a
//! larger blob from firing. The box center is nudged toward the brighter
//! half of the window by a bounded linear regressor. Everything is a box sum, so the forward pass runs on an
//! integral image and the backward pass on a 2-D difference array.

use serde::{Deserialize, Serialize};

use super::{DetectionSeed, DetectionTap, Detector, DetectorHandle, GradDetections, GradientContext};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BBox, Detection};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDetectorSpec {
    /// Inner-square side lengths in pixels.
    pub scales: Vec<usize>,
    pub stride: usize,
    /// Logistic slope applied to the contrast score.
    pub slope: f64,
    /// Contrast at which confidence is 0.5.
    pub offset: f64,
    /// Temperature of the log-sum-exp over the four side strips.
    pub surround_temperature: f64,
    /// Gain of the center-offset regressor.
    pub regression_gain: f64,
    /// Candidates below this confidence never reach a loss.
    pub candidate_floor: f64,
    /// IoU a window needs with a target box to count as positive in
    /// [`Detector::training_loss`].
    pub positive_iou: f64,
}

impl Default for ToyDetectorSpec {
    fn default() -> Self {
        Self {
            scales: vec![8, 12, 16, 24, 32],
            stride: 2,
            slope: 12.0,
            offset: 0.2,
            surround_temperature: 0.03,
            regression_gain: 3.0,
            candidate_floor: 1e-3,
            positive_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// One sliding-window position: inner square at `(u, v)` of side `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub scale: usize,
    pub u: usize,
    pub v: usize,
}

impl Window {
    fn inner(&self) -> Rect {
        Rect {
            x0: self.u,
            y0: self.v,
            x1: self.u + self.scale,
            y1: self.v + self.scale,
        }
    }

    /// Strips of depth `scale / 2` beside each edge of the inner square,
    /// clipped to the frame; `None` when a strip falls entirely outside.
    fn strips(&self, w: usize, h: usize) -> [Option<Rect>; 4] {
        let r = (self.scale / 2).max(1);
        let inner = self.inner();
        let nonempty = |rect: Rect| (rect.x1 > rect.x0 && rect.y1 > rect.y0).then_some(rect);
        [
            nonempty(Rect { x0: inner.x0.saturating_sub(r), x1: inner.x0, ..inner }),
            nonempty(Rect { x0: inner.x1.min(w), x1: (inner.x1 + r).min(w), ..inner }),
            nonempty(Rect { y0: inner.y0.saturating_sub(r), y1: inner.y0, ..inner }),
            nonempty(Rect { y0: inner.y1.min(h), y1: (inner.y1 + r).min(h), ..inner }),
        ]
    }

    fn halves(&self) -> [Rect; 4] {
        let s = self.scale;
        let half = s / 2;
        let inner = self.inner();
        [
            Rect { x1: inner.x0 + half, ..inner },
            Rect { x0: inner.x1 - half, ..inner },
            Rect { y1: inner.y0 + half, ..inner },
            Rect { y0: inner.y1 - half, ..inner },
        ]
    }

    /// The fixed anchor box of this window.
    pub fn anchor(&self) -> BBox {
        let half = self.scale as f64 / 2.0;
        BBox::new(
            self.u as f64 + half,
            self.v as f64 + half,
            self.scale as f64,
            self.scale as f64,
        )
        .expect("scale is positive")
    }
}

struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(lum: &[f64], w: usize, h: usize) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += lum[y * w + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    fn sum(&self, r: Rect) -> f64 {
        let s = self.w + 1;
        self.sums[r.y1 * s + r.x1] - self.sums[r.y0 * s + r.x1] - self.sums[r.y1 * s + r.x0]
            + self.sums[r.y0 * s + r.x0]
    }
}

/// Forward values of one window, including what the backward pass needs.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub window: Window,
    /// Center-surround contrast.
    pub score: f64,
    /// Pre-logistic activation `slope * (score - offset)`.
    pub logit: f64,
    pub confidence: f64,
    tanh_x: f64,
    tanh_y: f64,
    strips: [Option<Rect>; 4],
    /// Softmax weight of each strip in the surround term.
    strip_weights: [f64; 4],
    pub bbox: BBox,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct ToyDetector {
    handle: DetectorHandle,
    spec: ToyDetectorSpec,
}

impl Default for ToyDetector {
    fn default() -> Self {
        Self::new(ToyDetectorSpec::default(), 0.5, 0.3).expect("default spec is valid")
    }
}

impl ToyDetector {
    pub fn new(spec: ToyDetectorSpec, confidence_threshold: f64, nms_threshold: f64) -> Result<Self> {
        if spec.scales.is_empty() || spec.scales.iter().any(|&s| s < 2) {
            return Err(Error::config("toy detector scales must be non-empty and >= 2"));
        }
        if spec.stride == 0 {
            return Err(Error::config("toy detector stride must be >= 1"));
        }
        if !(spec.slope > 0.0) {
            return Err(Error::config("toy detector slope must be positive"));
        }
        Ok(Self {
            handle: DetectorHandle {
                name: "toy".into(),
                supports_gradients: true,
                supports_training_loss: true,
                confidence_threshold,
                nms_threshold,
            },
            spec,
        })
    }

    pub fn spec(&self) -> &ToyDetectorSpec {
        &self.spec
    }

    pub fn windows(&self, w: usize, h: usize) -> Vec<Window> {
        let mut out = Vec::new();
        for &scale in &self.spec.scales {
            if scale > w || scale > h {
                continue;
            }
            for v in (0..=h - scale).step_by(self.spec.stride) {
                for u in (0..=w - scale).step_by(self.spec.stride) {
                    out.push(Window { scale, u, v });
                }
            }
        }
        out
    }

    /// Scores every window. Order is scale-major, then row, then column.
    pub fn candidates(&self, image: &Image) -> Vec<Candidate> {
        let (w, h, _) = image.dims();
        let lum = image.luminance();
        let integral = Integral::new(&lum, w, h);
        self.windows(w, h)
            .into_iter()
            .map(|win| self.evaluate(&integral, win, w, h))
            .collect()
    }

    fn evaluate(&self, integral: &Integral, win: Window, w: usize, h: usize) -> Candidate {
        let inner = win.inner();
        let inner_mean = integral.sum(inner) / inner.area() as f64;
        let strips = win.strips(w, h);
        let tau = self.spec.surround_temperature;
        let mut means = [f64::NEG_INFINITY; 4];
        for (m, strip) in means.iter_mut().zip(&strips) {
            if let Some(r) = strip {
                *m = integral.sum(*r) / r.area() as f64;
            }
        }
        let peak = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut strip_weights = [0.0; 4];
        let surround = if peak == f64::NEG_INFINITY {
            0.0
        } else {
            let mut total = 0.0;
            for (wgt, m) in strip_weights.iter_mut().zip(&means) {
                *wgt = ((m - peak) / tau).exp();
                total += *wgt;
            }
            strip_weights.iter_mut().for_each(|wgt| *wgt /= total);
            peak + tau * total.ln()
        };
        let score = inner_mean - surround;
        let logit = self.spec.slope * (score - self.spec.offset);
        let confidence = sigmoid(logit);

        let [left, right, top, bottom] = win.halves();
        let half_n = left.area() as f64;
        let diff_x = (integral.sum(right) - integral.sum(left)) / half_n;
        let diff_y = (integral.sum(bottom) - integral.sum(top)) / half_n;
        let tanh_x = (self.spec.regression_gain * diff_x).tanh();
        let tanh_y = (self.spec.regression_gain * diff_y).tanh();
        let reach = win.scale as f64 / 4.0;
        let anchor = win.anchor();
        let bbox = anchor.translated(reach * tanh_x, reach * tanh_y);
        Candidate {
            window: win,
            score,
            logit,
            confidence,
            tanh_x,
            tanh_y,
            strips,
            strip_weights,
            bbox,
        }
    }

    fn to_detection(c: &Candidate) -> Detection {
        Detection::new(c.confidence, c.bbox).expect("sigmoid output lies in [0, 1]")
    }

    fn suppress(&self, cands: Vec<Candidate>) -> Vec<Candidate> {
        let dets: Vec<Detection> = cands.iter().map(Self::to_detection).collect();
        nms(&dets, self.handle.nms_threshold)
            .into_iter()
            .map(|i| cands[i])
            .collect()
    }

    fn context(&self, image: &Image, selected: Vec<Candidate>) -> ToyGradientContext {
        ToyGradientContext {
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
            slope: self.spec.slope,
            gain: self.spec.regression_gain,
            selected,
        }
    }
}

impl Detector for ToyDetector {
    fn handle(&self) -> &DetectorHandle {
        &self.handle
    }

    fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        let thr = self.handle.confidence_threshold;
        let cands: Vec<Candidate> = self
            .candidates(image)
            .into_iter()
            .filter(|c| c.confidence >= thr)
            .collect();
        Ok(self.suppress(cands).iter().map(Self::to_detection).collect())
    }

    fn detect_with_gradients(&self, image: &Image, tap: DetectionTap) -> Result<GradDetections> {
        let floor = self.spec.candidate_floor;
        let cands: Vec<Candidate> = self
            .candidates(image)
            .into_iter()
            .filter(|c| c.confidence >= floor)
            .collect();
        let selected = match tap {
            DetectionTap::PreNms => cands,
            DetectionTap::PostNms => self.suppress(cands),
        };
        let detections = selected.iter().map(Self::to_detection).collect();
        Ok(GradDetections {
            detections,
            context: Box::new(self.context(image, selected)),
        })
    }

    /// Logistic classification over every anchor plus squared center error
    /// (in units of the window side) on positive anchors.
    fn training_loss(&self, image: &Image, target: &[BBox]) -> Result<(f64, Image)> {
        let cands = self.candidates(image);
        if cands.is_empty() {
            return Err(Error::domain("image is smaller than every detector window"));
        }
        let n = cands.len() as f64;
        let mut seeds = vec![DetectionSeed::default(); cands.len()];
        let mut cls = 0.0;
        let mut loc_terms = Vec::new();
        for (i, c) in cands.iter().enumerate() {
            let anchor = c.window.anchor();
            let best = target
                .iter()
                .map(|t| (iou(&anchor, t), t))
                .max_by(|a, b| a.0.total_cmp(&b.0));
            let positive = best.is_some_and(|(v, _)| v >= self.spec.positive_iou);
            let y = f64::from(u8::from(positive));
            cls += softplus(c.logit) - y * c.logit;
            // d/dlogit of the BCE term is (p - y); the context multiplies by
            // dp/dlogit, so seed with (p - y) / (p (1 - p)) when that is finite.
            seeds[i].confidence = logit_seed(c.confidence, c.confidence - y) / n;
            if let Some((_, t)) = best.filter(|_| positive) {
                loc_terms.push((i, *t));
            }
        }
        let mut value = cls / n;
        if !loc_terms.is_empty() {
            let m = loc_terms.len() as f64;
            for &(i, t) in &loc_terms {
                let c = &cands[i];
                let s2 = (c.window.scale * c.window.scale) as f64;
                let dx = c.bbox.x() - t.x();
                let dy = c.bbox.y() - t.y();
                value += (dx * dx + dy * dy) / s2 / m;
                seeds[i].x += 2.0 * dx / s2 / m;
                seeds[i].y += 2.0 * dy / s2 / m;
            }
        }
        let grad = self.context(image, cands).backward(&seeds)?;
        Ok((value, grad))
    }
}

/// Converts a gradient with respect to the logit into a gradient with
/// respect to the confidence.
fn logit_seed(p: f64, d_logit: f64) -> f64 {
    let dp = p * (1.0 - p);
    if dp > 0.0 {
        d_logit / dp
    } else {
        0.0
    }
}

/// Windows kept for one forward pass, aligned with the returned detections.
struct ToyGradientContext {
    width: usize,
    height: usize,
    channels: usize,
    slope: f64,
    gain: f64,
    selected: Vec<Candidate>,
}

impl ToyGradientContext {
    fn add_rect(diff: &mut [f64], stride: usize, r: Rect, coef: f64) {
        diff[r.y0 * stride + r.x0] += coef;
        diff[r.y0 * stride + r.x1] -= coef;
        diff[r.y1 * stride + r.x0] -= coef;
        diff[r.y1 * stride + r.x1] += coef;
    }
}

impl GradientContext for ToyGradientContext {
    fn backward(&self, seeds: &[DetectionSeed]) -> Result<Image> {
        if seeds.len() != self.selected.len() {
            return Err(Error::domain(format!(
                "expected {} seeds, got {}",
                self.selected.len(),
                seeds.len()
            )));
        }
        let (w, h) = (self.width, self.height);
        let stride = w + 1;
        let mut diff = vec![0.0; stride * (h + 1)];
        for (c, seed) in self.selected.iter().zip(seeds) {
            let win = c.window;
            let inner = win.inner();
            if seed.confidence != 0.0 {
                let p = c.confidence;
                let d_score = seed.confidence * self.slope * p * (1.0 - p);
                Self::add_rect(&mut diff, stride, inner, d_score / inner.area() as f64);
                for (strip, wgt) in c.strips.iter().zip(&c.strip_weights) {
                    if let Some(r) = strip {
                        Self::add_rect(&mut diff, stride, *r, -d_score * wgt / r.area() as f64);
                    }
                }
            }
            let reach = win.scale as f64 / 4.0;
            let [left, right, top, bottom] = win.halves();
            let half_n = left.area() as f64;
            if seed.x != 0.0 {
                let d = seed.x * reach * self.gain * (1.0 - c.tanh_x * c.tanh_x) / half_n;
                Self::add_rect(&mut diff, stride, right, d);
                Self::add_rect(&mut diff, stride, left, -d);
            }
            if seed.y != 0.0 {
                let d = seed.y * reach * self.gain * (1.0 - c.tanh_y * c.tanh_y) / half_n;
                Self::add_rect(&mut diff, stride, bottom, d);
                Self::add_rect(&mut diff, stride, top, -d);
            }
        }
        // Prefix-summing the difference array yields the per-pixel gradient.
        for y in 0..=h {
            for x in 1..=w {
                diff[y * stride + x] += diff[y * stride + x - 1];
            }
        }
        for y in 1..=h {
            for x in 0..=w {
                diff[y * stride + x] += diff[(y - 1) * stride + x];
            }
        }
        let inv_c = 1.0 / self.channels as f64;
        Ok(Image::from_fn(w, h, self.channels, |x, y, _| diff[y * stride + x] * inv_c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_image(size: usize, blobs: &[(usize, usize, usize)], seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(size, size, 1, |x, y, _| {
            let inside = blobs
                .iter()
                .any(|&(l, t, s)| x >= l && x < l + s && y >= t && y < t + s);
            if inside {
                0.9
            } else {
                0.1 + 0.2 * rng.random::<f64>()
            }
        })
    }

    /// Direct per-pixel evaluation of one window's contrast score.
    fn brute_score(img: &Image, win: Window, tau: f64) -> f64 {
        let (w, h, _) = img.dims();
        let lum = img.luminance();
        let (u, v, s) = (win.u as i64, win.v as i64, win.scale as i64);
        let r = (s / 2).max(1);
        let mean = |x0: i64, y0: i64, x1: i64, y1: i64| -> Option<f64> {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in y0.max(0)..y1.min(h as i64) {
                for x in x0.max(0)..x1.min(w as i64) {
                    sum += lum[y as usize * w + x as usize];
                    n += 1;
                }
            }
            (n > 0).then(|| sum / n as f64)
        };
        let inner = mean(u, v, u + s, v + s).unwrap();
        let sides: Vec<f64> = [
            mean(u - r, v, u, v + s),
            mean(u + s, v, u + s + r, v + s),
            mean(u, v - r, u + s, v),
            mean(u, v + s, u + s, v + s + r),
        ]
        .into_iter()
        .flatten()
        .collect();
        if sides.is_empty() {
            return inner;
        }
        inner - tau * sides.iter().map(|m| (m / tau).exp()).sum::<f64>().ln()
    }

    #[test]
    fn integral_scores_match_brute_force() {
        let img = blob_image(40, &[(10, 12, 12)], 3);
        let det = ToyDetector::default();
        for c in det.candidates(&img) {
            let want = brute_score(&img, c.window, det.spec().surround_temperature);
            assert!((c.score - want).abs() < 1e-9, "{:?}", c.window);
        }
    }

    #[test]
    fn blank_image_has_no_detections() {
        let det = ToyDetector::default();
        assert!(det.detect(&Image::filled(64, 64, 1, 0.4)).unwrap().is_empty());
    }

    #[test]
    fn single_blob_single_detection_near_center() {
        let det = ToyDetector::default();
        let img = blob_image(64, &[(20, 26, 16)], 7);
        let found = det.detect(&img).unwrap();
        assert_eq!(found.len(), 1, "{found:?}");
        let b = found[0].bbox;
        let half_stride = det.spec().stride as f64 / 2.0;
        assert!((b.x() - 28.0).abs() <= half_stride + 1e-9);
        assert!((b.y() - 34.0).abs() <= half_stride + 1e-9);
    }

    #[test]
    fn two_blobs_two_detections() {
        let det = ToyDetector::default();
        let img = blob_image(64, &[(4, 4, 12), (44, 40, 12)], 11);
        assert_eq!(det.detect(&img).unwrap().len(), 2);
    }

    #[test]
    fn blob_size_selects_matching_scale() {
        let det = ToyDetector::default();
        for sigma in [8usize, 16, 32] {
            let corner = (64 - sigma) / 2;
            let img = blob_image(64, &[(corner, corner, sigma)], sigma as u64);
            let found = det.detect(&img).unwrap();
            assert_eq!(found.len(), 1, "sigma={sigma}: {found:?}");
            assert_eq!(found[0].bbox.w(), sigma as f64);
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let det = ToyDetector::default();
        let img = blob_image(64, &[(20, 20, 14)], 5);
        let a = det.detect(&img).unwrap();
        let b = det.detect(&img).unwrap();
        assert_eq!(a, b);
    }

    fn fd_check(det: &ToyDetector, img: &Image, seed_of: impl Fn(usize) -> DetectionSeed) {
        let out = det.detect_with_gradients(img, DetectionTap::PreNms).unwrap();
        let seeds: Vec<DetectionSeed> = (0..out.detections.len()).map(&seed_of).collect();
        let grad = out.context.backward(&seeds).unwrap();
        let objective = |im: &Image| -> f64 {
            // Same candidate set: the floor filter is skipped by using all candidates.
            let all = det.candidates(im);
            let kept: Vec<&Candidate> = all.iter().filter(|c| c.confidence >= det.spec().candidate_floor).collect();
            kept.iter()
                .zip(&seeds)
                .map(|(c, s)| s.confidence * c.confidence + s.x * c.bbox.x() + s.y * c.bbox.y())
                .sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-4;
        for _ in 0..20 {
            let k = rng.random_range(0..img.as_slice().len());
            let mut plus = img.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = img.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = grad.as_slice()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel <= 1e-4 || (fd - an).abs() < 1e-9, "k={k} fd={fd} an={an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let det = ToyDetector::default();
        let img = blob_image(32, &[(9, 10, 12)], 1);
        fd_check(&det, &img, |j| DetectionSeed {
            confidence: if j == 0 { 1.0 } else { 0.0 },
            ..Default::default()
        });
        fd_check(&det, &img, |j| DetectionSeed {
            confidence: (j % 3) as f64 - 1.0,
            x: ((j * 7) % 5) as f64 - 2.0,
            y: ((j * 3) % 4) as f64 - 1.5,
            ..Default::default()
        });
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let det = ToyDetector::default();
        let img = blob_image(32, &[(9, 10, 12)], 1);
        let out = det.detect_with_gradients(&img, DetectionTap::PostNms).unwrap();
        let seeds = vec![DetectionSeed::default(); out.detections.len()];
        let grad = out.context.backward(&seeds).unwrap();
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
        assert!(out.context.backward(&[]).is_err() || out.detections.is_empty());
    }

    #[test]
    fn gradient_is_local_to_window_support() {
        let det = ToyDetector::default();
        let img = blob_image(64, &[(8, 8, 8)], 2);
        let out = det.detect_with_gradients(&img, DetectionTap::PreNms).unwrap();
        // Seed the single best candidate only.
        let best = out
            .detections
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.confidence().total_cmp(&b.1.confidence()))
            .unwrap()
            .0;
        let seeds: Vec<DetectionSeed> = (0..out.detections.len())
            .map(|j| DetectionSeed {
                confidence: f64::from(u8::from(j == best)),
                x: f64::from(u8::from(j == best)),
                ..Default::default()
            })
            .collect();
        let grad = out.context.backward(&seeds).unwrap();
        // An 8-px window grown by 4 px on every side never reaches x, y >= 32.
        for y in 0..64 {
            for x in 0..64 {
                if x >= 32 || y >= 32 {
                    assert!(grad.get(x, y, 0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn training_loss_behaviour() {
        let det = ToyDetector::default();
        let img = blob_image(48, &[(16, 16, 16)], 4);
        let own = det.detect(&img).unwrap();
        assert_eq!(own.len(), 1);
        let own_boxes: Vec<BBox> = own.iter().map(|d| d.bbox).collect();
        let (at_own, _) = det.training_loss(&img, &own_boxes).unwrap();
        let moved: Vec<BBox> = own_boxes.iter().map(|b| b.translated(9.0, -7.0)).collect();
        let (at_moved, _) = det.training_loss(&img, &moved).unwrap();
        assert!(at_own < at_moved);
        let (empty, _) = det.training_loss(&img, &[]).unwrap();
        assert!(empty > 0.0);
    }

    #[test]
    fn training_loss_descends_toward_reachable_target() {
        let det = ToyDetector::default();
        let mut img = blob_image(32, &[(8, 8, 12)], 8);
        let target = [BBox::new(14.0, 14.0, 12.0, 12.0).unwrap()];
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let (v, g) = det.training_loss(&img, &target).unwrap();
            assert!(v < last, "{v} >= {last}");
            last = v;
            for (p, d) in img.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= 0.5 * d;
            }
        }
    }

    #[test]
    fn training_loss_gradient_matches_finite_differences() {
        let det = ToyDetector::default();
        let img = blob_image(24, &[(6, 7, 10)], 6);
        let target = [BBox::new(12.0, 11.0, 12.0, 12.0).unwrap()];
        let (_, g) = det.training_loss(&img, &target).unwrap();
        let h = 1e-5;
        for k in [0usize, 37, 150, 300, 575] {
            let mut plus = img.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = img.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (det.training_loss(&plus, &target).unwrap().0
                - det.training_loss(&minus, &target).unwrap().0)
                / (2.0 * h);
            assert!((fd - g.as_slice()[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "k={k}");
        }
    }
}
