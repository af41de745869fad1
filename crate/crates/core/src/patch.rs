//! Patch application: scaling to the largest face, modular tiling across the
//! frame, and alpha composition behind the foreground mask.
//!
//! Every stage is linear in the patch pixels, so each forward operation has a
//! matching adjoint used to pull image-space gradients back onto the patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundTruthSet;
use crate::image::{ForegroundMask, Image};

/// Trainable patch; every pixel lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: Image,
}

impl Patch {
    pub fn new(pixels: Image) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 || pixels.channels() == 0 {
            return Err(Error::domain("patch must have at least one pixel"));
        }
        if let Some(v) = pixels.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("patch pixel {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn gray(width: usize, height: usize, channels: usize) -> Self {
        Self {
            pixels: Image::filled(width.max(1), height.max(1), channels.max(1), 0.5),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(width: usize, height: usize, channels: usize, rng: &mut R) -> Self {
        let pixels = Image::from_fn(width.max(1), height.max(1), channels.max(1), |_, _, _| {
            rng.random::<f64>()
        });
        Self { pixels }
    }

    /// Clamps every value into `[0, 1]`.
    pub fn from_clamped(mut pixels: Image) -> Result<Self> {
        pixels.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self::new(pixels)
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels()
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn into_pixels(self) -> Image {
        self.pixels
    }
}

/// Separable resampling plan along one axis: output `i` reads
/// `taps[i].0 ..` with weights `taps[i].1`.
#[derive(Debug, Clone)]
struct AxisPlan {
    in_len: usize,
    taps: Vec<(usize, Vec<f64>)>,
}

impl AxisPlan {
    /// Triangle filter with half-pixel centres. Upscaling reduces to plain
    /// bilinear interpolation; downscaling widens the support so every input
    /// sample contributes to some output.
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let support = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let taps = (0..out_len)
            .map(|i| {
                let center = (i as f64 + 0.5) / scale;
                let lo = ((center - support).floor() as i64).max(0) as usize;
                let hi = ((center + support).ceil() as i64).min(in_len as i64) as usize;
                let mut weights: Vec<f64> = (lo..hi)
                    .map(|j| (1.0 - ((j as f64 + 0.5 - center) / support).abs()).max(0.0))
                    .collect();
                let sum: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= sum);
                (lo, weights)
            })
            .collect();
        Self { in_len, taps }
    }

    fn out_len(&self) -> usize {
        self.taps.len()
    }
}

fn resize(src: &Image, out_w: usize, out_h: usize) -> Image {
    let (in_w, in_h, ch) = src.dims();
    let px = AxisPlan::new(in_w, out_w);
    let py = AxisPlan::new(in_h, out_h);
    let mut tmp = Image::new(out_w, in_h, ch);
    for y in 0..in_h {
        for (x, (lo, ws)) in px.taps.iter().enumerate() {
            for c in 0..ch {
                let v: f64 = ws.iter().enumerate().map(|(k, w)| w * src.get(lo + k, y, c)).sum();
                tmp.set(x, y, c, v);
            }
        }
    }
    let mut out = Image::new(out_w, out_h, ch);
    for (y, (lo, ws)) in py.taps.iter().enumerate() {
        for x in 0..out_w {
            for c in 0..ch {
                let v: f64 = ws.iter().enumerate().map(|(k, w)| w * tmp.get(x, lo + k, c)).sum();
                out.set(x, y, c, v);
            }
        }
    }
    out
}

/// Transpose of [`resize`]: maps a gradient on the resized grid back onto
/// the `in_w x in_h` source grid.
fn resize_adjoint(grad: &Image, in_w: usize, in_h: usize) -> Image {
    let (out_w, out_h, ch) = grad.dims();
    let px = AxisPlan::new(in_w, out_w);
    let py = AxisPlan::new(in_h, out_h);
    debug_assert_eq!((px.out_len(), py.out_len()), (out_w, out_h));
    let mut tmp = Image::new(out_w, py.in_len, ch);
    for (y, (lo, ws)) in py.taps.iter().enumerate() {
        for x in 0..out_w {
            for c in 0..ch {
                let g = grad.get(x, y, c);
                for (k, w) in ws.iter().enumerate() {
                    let i = tmp.index(x, lo + k, c);
                    tmp.as_mut_slice()[i] += w * g;
                }
            }
        }
    }
    let mut out = Image::new(px.in_len, in_h, ch);
    for y in 0..in_h {
        for (x, (lo, ws)) in px.taps.iter().enumerate() {
            for c in 0..ch {
                let g = tmp.get(x, y, c);
                for (k, w) in ws.iter().enumerate() {
                    let i = out.index(lo + k, y, c);
                    out.as_mut_slice()[i] += w * g;
                }
            }
        }
    }
    out
}

/// Patch resized so its area is `alpha` times the largest face.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPatch {
    pub pixels: Image,
    pub scale: f64,
}

impl ScaledPatch {
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Scale factor `s` and the rounded output size (each side at least 1).
pub fn scaled_dims(patch_w: usize, patch_h: usize, gts: &GroundTruthSet, alpha: f64) -> Result<(f64, usize, usize)> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    let (_, face) = gts.largest()?;
    let s = (alpha * face.w() * face.h() / (patch_h as f64 * patch_w as f64)).sqrt();
    let w = ((patch_w as f64 * s).round() as usize).max(1);
    let h = ((patch_h as f64 * s).round() as usize).max(1);
    Ok((s, w, h))
}

fn scale_pixels(pixels: &Image, gts: &GroundTruthSet, alpha: f64) -> Result<ScaledPatch> {
    let (scale, w, h) = scaled_dims(pixels.width(), pixels.height(), gts, alpha)?;
    Ok(ScaledPatch {
        pixels: resize(pixels, w, h),
        scale,
    })
}

/// Resizes the patch against the largest ground-truth face.
pub fn scale_patch(patch: &Patch, gts: &GroundTruthSet, alpha: f64) -> Result<ScaledPatch> {
    scale_pixels(patch.pixels(), gts, alpha)
}

/// Scaled patch repeated across a full frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTile {
    pub pixels: Image,
}

/// `tile[x, y] = scaled[(x + dx) mod w, (y + dy) mod h]`, cut at the frame edge.
pub fn tile_patch_with_phase(
    image_w: usize,
    image_h: usize,
    scaled: &ScaledPatch,
    phase: (usize, usize),
) -> PatchTile {
    let src = &scaled.pixels;
    let (sw, sh, ch) = src.dims();
    let pixels = Image::from_fn(image_w, image_h, ch, |x, y, c| {
        src.get((x + phase.0) % sw, (y + phase.1) % sh, c)
    });
    PatchTile { pixels }
}

pub fn tile_patch(image_w: usize, image_h: usize, scaled: &ScaledPatch) -> PatchTile {
    tile_patch_with_phase(image_w, image_h, scaled, (0, 0))
}

/// `out = mask * foreground + (1 - mask) * background`, per pixel.
pub fn composite(foreground: &Image, mask: &ForegroundMask, background: &Image) -> Result<Image> {
    background.ensure_dims(foreground.dims())?;
    let (w, h, ch) = foreground.dims();
    if (mask.width(), mask.height()) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h, 1),
            actual: (mask.width(), mask.height(), 1),
        });
    }
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(x, y);
            for c in 0..ch {
                out.set(x, y, c, m * foreground.get(x, y, c) + (1.0 - m) * background.get(x, y, c));
            }
        }
    }
    Ok(out)
}

/// Where the scaled patch goes in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Repeated over the whole frame, starting at `phase`.
    Tiled { phase: (usize, usize) },
    /// One untiled copy with its top-left corner at `(x, y)`; the rest of the
    /// background is left as is.
    Fixed { x: i64, y: i64 },
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Tiled { phase: (0, 0) }
    }
}

/// Forward result of [`PatchApplier::apply`], kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AppliedPatch {
    pub image: Image,
    pub scaled_w: usize,
    pub scaled_h: usize,
    pub scale: f64,
}

/// Scaling + placement + composition with fixed `alpha` and placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchApplier {
    pub alpha: f64,
    pub placement: Placement,
}

impl PatchApplier {
    pub fn new(alpha: f64, placement: Placement) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, placement })
    }

    pub fn tiled(alpha: f64) -> Result<Self> {
        Self::new(alpha, Placement::default())
    }

    fn check_inputs(&self, image: &Image, patch: &Image, mask: &ForegroundMask) -> Result<()> {
        if patch.channels() != image.channels() {
            return Err(Error::DimensionMismatch {
                expected: (patch.width(), patch.height(), image.channels()),
                actual: patch.dims(),
            });
        }
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(Error::DimensionMismatch {
                expected: (image.width(), image.height(), 1),
                actual: (mask.width(), mask.height(), 1),
            });
        }
        Ok(())
    }

    /// Applies raw patch pixels. Values outside `[0, 1]` are allowed so the
    /// optimizer can probe look-ahead points.
    pub fn apply(
        &self,
        image: &Image,
        gts: &GroundTruthSet,
        patch: &Image,
        mask: &ForegroundMask,
    ) -> Result<AppliedPatch> {
        self.check_inputs(image, patch, mask)?;
        let scaled = scale_pixels(patch, gts, self.alpha)?;
        let (w, h, _) = image.dims();
        let background = match self.placement {
            Placement::Tiled { phase } => tile_patch_with_phase(w, h, &scaled, phase).pixels,
            Placement::Fixed { x: ox, y: oy } => {
                let mut bg = image.clone();
                for (x, y, sx, sy) in fixed_cover(w, h, scaled.width(), scaled.height(), ox, oy) {
                    for c in 0..bg.channels() {
                        bg.set(x, y, c, scaled.pixels.get(sx, sy, c));
                    }
                }
                bg
            }
        };
        Ok(AppliedPatch {
            image: composite(image, mask, &background)?,
            scaled_w: scaled.width(),
            scaled_h: scaled.height(),
            scale: scaled.scale,
        })
    }

    /// Pulls `d loss / d output` back to `d loss / d patch`.
    pub fn backward(
        &self,
        applied: &AppliedPatch,
        mask: &ForegroundMask,
        patch_dims: (usize, usize),
        grad_out: &Image,
    ) -> Image {
        let (w, h, ch) = grad_out.dims();
        let (sw, sh) = (applied.scaled_w, applied.scaled_h);
        let mut grad_scaled = Image::new(sw, sh, ch);
        let mut accumulate = |x: usize, y: usize, sx: usize, sy: usize| {
            let keep = 1.0 - mask.get(x, y);
            if keep == 0.0 {
                return;
            }
            for c in 0..ch {
                let i = grad_scaled.index(sx, sy, c);
                grad_scaled.as_mut_slice()[i] += keep * grad_out.get(x, y, c);
            }
        };
        match self.placement {
            Placement::Tiled { phase } => {
                for y in 0..h {
                    for x in 0..w {
                        accumulate(x, y, (x + phase.0) % sw, (y + phase.1) % sh);
                    }
                }
            }
            Placement::Fixed { x: ox, y: oy } => {
                for (x, y, sx, sy) in fixed_cover(w, h, sw, sh, ox, oy) {
                    accumulate(x, y, sx, sy);
                }
            }
        }
        resize_adjoint(&grad_scaled, patch_dims.0, patch_dims.1)
    }
}

/// Frame cells `(x, y)` covered by a single copy at `(ox, oy)`, paired with
/// the scaled-patch cell that lands there.
fn fixed_cover(
    w: usize,
    h: usize,
    sw: usize,
    sh: usize,
    ox: i64,
    oy: i64,
) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let x0 = ox.max(0);
    let x1 = (ox + sw as i64).min(w as i64);
    let y0 = oy.max(0);
    let y1 = (oy + sh as i64).min(h as i64);
    (y0..y1.max(y0)).flat_map(move |y| {
        (x0..x1.max(x0)).map(move |x| (x as usize, y as usize, (x - ox) as usize, (y - oy) as usize))
    })
}

/// Tiled patch application with default phase.
pub fn apply_patch(
    image: &Image,
    gts: &GroundTruthSet,
    patch: &Patch,
    alpha: f64,
    mask: &ForegroundMask,
) -> Result<Image> {
    Ok(PatchApplier::tiled(alpha)?
        .apply(image, gts, patch.pixels(), mask)?
        .image)
}
