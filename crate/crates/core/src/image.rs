//! Floating-point pixel grids and PNG round-tripping.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved row-major grid, `data[(y * width + x) * channels + c]`.
/// `x` is the column, `y` the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::domain(format!(
                "pixel buffer of length {} does not fit {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Per-pixel mean over channels.
    pub fn luminance(&self) -> Vec<f64> {
        let inv = 1.0 / self.channels as f64;
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() * inv)
            .collect()
    }

    pub fn ensure_dims(&self, expected: (usize, usize, usize)) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    /// Translates the content by `(tx, ty)` pixels, filling uncovered cells
    /// with `fill`.
    pub fn shifted(&self, tx: i64, ty: i64, fill: f64) -> Self {
        let mut out = Self::filled(self.width, self.height, self.channels, fill);
        for y in 0..self.height {
            let sy = y as i64 - ty;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..self.width {
                let sx = x as i64 - tx;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(sx as usize, sy as usize, c));
                }
            }
        }
        out
    }

    /// Reads an 8- or 16-bit PNG as grayscale (1 channel) or RGB (3 channels).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
        let gray = !img.color().has_color();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f64> = if gray {
            img.into_luma16()
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect()
        } else {
            img.into_rgb16()
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect()
        };
        Self::from_vec(w, h, if gray { 1 } else { 3 }, data)
    }

    /// Writes a lossless 16-bit PNG; values are clamped to `[0, 1]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let quant: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, quant)
                .expect("buffer sized from dims")
                .save_with_format(path, image::ImageFormat::Png),
            3 => image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(w, h, quant)
                .expect("buffer sized from dims")
                .save_with_format(path, image::ImageFormat::Png),
            c => {
                return Err(Error::domain(format!(
                    "cannot encode {c}-channel image as PNG"
                )))
            }
        };
        res.map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }
}

/// Per-pixel foreground weight in `[0, 1]`; 1 keeps the original pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ForegroundMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::domain(format!(
                "mask of length {} does not fit {width}x{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shifted(&self, tx: i64, ty: i64) -> Self {
        let img = Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.clone(),
        };
        Self {
            width: self.width,
            height: self.height,
            values: img.shifted(tx, ty, 0.0).data,
        }
    }

    /// Reads an 8-bit grayscale sidecar, mapping 0..=255 onto `[0, 1]`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
        let luma = img.into_luma8();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        let values = luma.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Self::new(w, h, values)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer sized from dims")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })
    }
}
