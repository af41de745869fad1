//! In-memory samples and their on-disk form.
//!
//! A manifest is JSON lines, one image per line:
//!
//! ```text
//! {"path":"img_0000.png","mask":"img_0000.mask.png","gt":[{"p":1.0,"x":..,"y":..,"w":..,"h":..}],"shift":{"dx":25,"dy":0,"tx":3,"ty":-8}}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Detection dumps
//! use the same per-detection object, one per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, DetectionRecord, GroundTruthSet};
use crate::image::{ForegroundMask, Image};

/// Placement of a sample on the coordinate-uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    /// Grid position the face's reference corner was moved to.
    pub dx: i64,
    pub dy: i64,
    /// Translation applied to the source content.
    pub tx: i64,
    pub ty: i64,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: ForegroundMask,
    pub gt: GroundTruthSet,
    pub shift: Option<Shift>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: ForegroundMask, boxes: Vec<BBox>) -> Self {
        let id = id.into();
        Self {
            gt: GroundTruthSet::new(id.clone(), boxes),
            id,
            image,
            mask,
            shift: None,
        }
    }
}

/// Checks every sample is trainable: non-empty ground truth and a mask that
/// matches its image. Lists all offenders at once.
pub fn validate_for_training(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset(vec!["dataset is empty".into()]));
    }
    let offenders: Vec<String> = samples
        .iter()
        .filter_map(|s| {
            if s.gt.is_empty() {
                Some(format!("{}: no ground-truth faces", s.id))
            } else if (s.mask.width(), s.mask.height()) != (s.image.width(), s.image.height()) {
                Some(format!("{}: mask size does not match image", s.id))
            } else {
                None
            }
        })
        .collect();
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::Dataset(offenders))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub gt: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Shift>,
}

/// Sidecar mask path for an image: `<stem>.mask.png` next to it.
pub fn mask_sidecar(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.mask.png"))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            serde_json::from_str(&line).map_err(|source| Error::Json {
                context: format!("{}:{n}", path.display()),
                source,
            })
        })
        .collect()
}

/// Loads a manifest and every image, mask and GT box it references.
/// Unreadable entries are collected and reported together.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest_entries(path)?;
    let mut samples = Vec::with_capacity(entries.len());
    let mut offenders = Vec::new();
    for entry in entries {
        let img_path = base.join(&entry.path);
        let mask_path = base.join(&entry.mask);
        let id = entry.path.display().to_string();
        let loaded = (|| -> Result<Sample> {
            let image = Image::load_png(&img_path)?;
            let mask = ForegroundMask::load_png(&mask_path)?;
            let boxes = entry
                .gt
                .iter()
                .map(|r| BBox::new(r.x, r.y, r.w, r.h))
                .collect::<Result<Vec<_>>>()?;
            let mut s = Sample::new(id.clone(), image, mask, boxes);
            s.shift = entry.shift;
            Ok(s)
        })();
        match loaded {
            Ok(s) => samples.push(s),
            Err(e) => offenders.push(format!("{id}: {e}")),
        }
    }
    if offenders.is_empty() {
        Ok(samples)
    } else {
        Err(Error::Dataset(offenders))
    }
}

/// Every `*.png` in `dir` (mask sidecars excluded), sorted by name, with no
/// ground truth. A missing mask sidecar becomes an all-background mask.
pub fn load_image_dir(dir: &Path) -> Result<Vec<Sample>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.ends_with(".png") && !name.ends_with(".mask.png")
        })
        .collect();
    paths.sort();
    let mut samples = Vec::with_capacity(paths.len());
    let mut offenders = Vec::new();
    for path in paths {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let loaded = Image::load_png(&path).and_then(|image| {
            let mask_path = mask_sidecar(&path);
            let mask = if mask_path.exists() {
                ForegroundMask::load_png(&mask_path)?
            } else {
                log::warn!("{}: no mask sidecar, treating every pixel as background", path.display());
                ForegroundMask::filled(image.width(), image.height(), 0.0)
            };
            Ok(Sample::new(id.clone(), image, mask, Vec::new()))
        });
        match loaded {
            Ok(s) => samples.push(s),
            Err(e) => offenders.push(format!("{id}: {e}")),
        }
    }
    if offenders.is_empty() {
        Ok(samples)
    } else {
        Err(Error::Dataset(offenders))
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes every sample as `<id>.png` + `<id>.mask.png` next to `manifest`
/// and the manifest itself.
pub fn write_dataset(manifest: &Path, samples: &[Sample]) -> Result<()> {
    let dir = manifest.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = fs::File::create(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let stem = sanitize(&s.id);
        let img_name = PathBuf::from(format!("{stem}.png"));
        let mask_name = mask_sidecar(&img_name);
        s.image.save_png(dir.join(&img_name))?;
        s.mask.save_png(dir.join(&mask_name))?;
        let entry = ManifestEntry {
            path: img_name,
            mask: mask_name,
            gt: s
                .gt
                .boxes
                .iter()
                .map(|b| DetectionRecord {
                    p: 1.0,
                    x: b.x(),
                    y: b.y(),
                    w: b.w(),
                    h: b.h(),
                })
                .collect(),
            shift: s.shift,
        };
        let line = serde_json::to_string(&entry).map_err(|source| Error::Json {
            context: "manifest entry".into(),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(manifest, e))?;
    }
    out.flush().map_err(|e| Error::io(manifest, e))
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut text = String::new();
    for d in dets {
        let line = serde_json::to_string(&DetectionRecord::from(d)).map_err(|source| Error::Json {
            context: "detection".into(),
            source,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let rec: DetectionRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
                context: format!("{}:{n}", path.display()),
                source,
            })?;
            Detection::try_from(rec)
        })
        .collect()
}
