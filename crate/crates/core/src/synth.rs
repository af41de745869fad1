//! Synthetic single-face scenes for desk-scale runs: one bright square
//! "face" on a noisy background, with an exact foreground mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::{BBox, GroundTruthSet};
use crate::image::{ForegroundMask, Image};
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Inclusive range of face side lengths.
    pub face_min: usize,
    pub face_max: usize,
    pub face_level: (f64, f64),
    /// Per-pixel texture amplitude inside the face.
    pub face_texture: f64,
    pub background: (f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 1,
            face_min: 10,
            face_max: 20,
            face_level: (0.9, 1.0),
            face_texture: 0.03,
            background: (0.0, 1.0),
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.face_min == 0 || self.face_min > self.face_max {
            return Err(Error::config("face size range is empty"));
        }
        if self.face_max > self.width || self.face_max > self.height {
            return Err(Error::config("faces must fit inside the frame"));
        }
        if self.channels == 0 {
            return Err(Error::config("scenes need at least one channel"));
        }
        Ok(())
    }

    /// One scene with a face of side `size` whose top-left corner is `(left, top)`.
    pub fn render<R: Rng + ?Sized>(&self, rng: &mut R, left: usize, top: usize, size: usize) -> (Image, ForegroundMask) {
        let level = rng.random_range(self.face_level.0..=self.face_level.1);
        let inside = |x: usize, y: usize| x >= left && x < left + size && y >= top && y < top + size;
        let (bg_lo, bg_hi) = self.background;
        let tex = self.face_texture;
        let image = Image::from_fn(self.width, self.height, self.channels, |x, y, _| {
            if inside(x, y) {
                (level + tex * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)
            } else {
                rng.random_range(bg_lo..=bg_hi)
            }
        });
        let mask = ForegroundMask::from_fn(self.width, self.height, |x, y| f64::from(u8::from(inside(x, y))))
            .expect("mask values are 0 or 1");
        (image, mask)
    }
}

/// `n` scenes with ground truth set to the rendered face square.
pub fn generate(spec: &SceneSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let size = rng.random_range(spec.face_min..=spec.face_max);
            let left = rng.random_range(0..=spec.width - size);
            let top = rng.random_range(0..=spec.height - size);
            let (image, mask) = spec.render(&mut rng, left, top, size);
            let face = BBox::from_corners(left as f64, top as f64, (left + size) as f64, (top + size) as f64)
                .expect("face side is positive");
            Sample::new(format!("synth_{i:05}"), image, mask, vec![face])
        })
        .collect())
}

/// Replaces each sample's ground truth with the detector's clean-image
/// output. Samples with no detection are dropped; their ids are returned.
pub fn label_with_detector(
    samples: Vec<Sample>,
    detector: &dyn Detector,
    exec: Exec,
) -> Result<(Vec<Sample>, Vec<String>)> {
    let (found, failed) = par::try_map_ordered(exec, &samples, |s| detector.detect(&s.image));
    if let Some((i, e)) = failed.into_iter().next() {
        return Err(Error::Dataset(vec![format!("{}: {e}", samples[i].id)]));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (mut s, dets) in samples.into_iter().zip(found) {
        if dets.is_empty() {
            dropped.push(s.id);
        } else {
            s.gt = GroundTruthSet::from_detections(s.id.clone(), &dets);
            kept.push(s);
        }
    }
    Ok((kept, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ToyDetector;
    use crate::geometry::iou;

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SceneSpec::default(), 3, 7).unwrap();
        let b = generate(&SceneSpec::default(), 3, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.gt, y.gt);
        }
    }

    #[test]
    fn toy_detector_finds_every_synthetic_face() {
        let det = ToyDetector::default();
        let samples = generate(&SceneSpec::default(), 60, 1).unwrap();
        for s in &samples {
            let found = det.detect(&s.image).unwrap();
            assert_eq!(found.len(), 1, "{}: {found:?}", s.id);
            assert!(iou(&found[0].bbox, &s.gt.boxes[0]) >= 0.5, "{}", s.id);
        }
        let (kept, dropped) = label_with_detector(samples, &det, Exec::Parallel).unwrap();
        assert_eq!(kept.len(), 60);
        assert!(dropped.is_empty());
    }

    #[test]
    fn rejects_oversized_faces() {
        let spec = SceneSpec {
            face_max: 100,
            ..SceneSpec::default()
        };
        assert!(generate(&spec, 1, 0).is_err());
    }
}
