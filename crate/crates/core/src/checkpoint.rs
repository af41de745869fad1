//! Patch files: a lossless 16-bit PNG plus a JSON sidecar
//! `<stem>.json` holding the patch size, scaling factor and a hash of the
//! training configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::patch::Patch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub w_p: usize,
    pub h_p: usize,
    pub alpha: f64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

pub fn meta_sidecar(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Hex SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn save_patch(path: &Path, patch: &Patch, meta: &PatchMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    patch.pixels().save_png(path)?;
    let sidecar = meta_sidecar(path);
    let text = serde_json::to_string_pretty(meta).map_err(|source| Error::Json {
        context: "patch metadata".into(),
        source,
    })?;
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
}

/// Loads a patch; the sidecar is optional.
pub fn load_patch(path: &Path) -> Result<(Patch, Option<PatchMeta>)> {
    let patch = Patch::new(Image::load_png(path)?)?;
    let sidecar = meta_sidecar(path);
    let meta = match fs::read_to_string(&sidecar) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|source| Error::Json {
            context: sidecar.display().to_string(),
            source,
        })?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&sidecar, e)),
    };
    Ok((patch, meta))
}
