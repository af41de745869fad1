//! Subprocess boundary for detectors that live outside this crate.
//!
//! An adapter is an executable at `$RAPFORGE_DETECTOR_DIR/<name>/detect`. It
//! receives a PNG path as its only argument and prints one JSON object per
//! detection on stdout: `{"p": .., "x": .., "y": .., "w": .., "h": ..}`.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{Detector, DetectorHandle};
use crate::error::{Error, Result};
use crate::geometry::{nms, Detection, DetectionRecord};
use crate::image::Image;

pub const DETECTOR_DIR_ENV: &str = "RAPFORGE_DETECTOR_DIR";

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub struct ExternalDetector {
    handle: DetectorHandle,
    program: PathBuf,
    // Adapters are invoked one at a time per handle.
    queue: Mutex<()>,
}

impl ExternalDetector {
    pub fn new(name: impl Into<String>, program: impl Into<PathBuf>) -> Self {
        Self {
            handle: DetectorHandle {
                name: name.into(),
                supports_gradients: false,
                supports_training_loss: false,
                confidence_threshold: 0.5,
                nms_threshold: 0.3,
            },
            program: program.into(),
            queue: Mutex::new(()),
        }
    }

    /// Finds `<name>/detect` under [`DETECTOR_DIR_ENV`].
    pub fn locate(name: &str) -> Result<Self> {
        let dir = std::env::var_os(DETECTOR_DIR_ENV).ok_or_else(|| {
            Error::Unavailable(name.into(), format!("{DETECTOR_DIR_ENV} is not set"))
        })?;
        let program = Path::new(&dir).join(name).join("detect");
        if !program.is_file() {
            return Err(Error::Unavailable(
                name.into(),
                format!("no adapter at {}", program.display()),
            ));
        }
        Ok(Self::new(name, program))
    }

    pub fn detect_path(&self, path: &Path) -> Result<Vec<Detection>> {
        let _guard = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        let out = Command::new(&self.program)
            .arg(path)
            .output()
            .map_err(|e| Error::Unavailable(self.handle.name.clone(), e.to_string()))?;
        if !out.status.success() {
            return Err(Error::Unavailable(
                self.handle.name.clone(),
                format!(
                    "adapter exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ),
            ));
        }
        let mut dets = Vec::new();
        for line in out.stdout.lines() {
            let line = line.map_err(|e| Error::io(&self.program, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectionRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
                context: format!("adapter `{}` output", self.handle.name),
                source,
            })?;
            let det = Detection::try_from(rec)?;
            if det.confidence() >= self.handle.confidence_threshold {
                dets.push(det);
            }
        }
        Ok(nms(&dets, self.handle.nms_threshold)
            .into_iter()
            .map(|i| dets[i])
            .collect())
    }
}

impl Detector for ExternalDetector {
    fn handle(&self) -> &DetectorHandle {
        &self.handle
    }

    fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        let n = SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = std::env::temp_dir().join(format!("rapforge-{}-{n}.png", std::process::id()));
        image.save_png(&path)?;
        let res = self.detect_path(&path);
        let _ = std::fs::remove_file(&path);
        res
    }
}
