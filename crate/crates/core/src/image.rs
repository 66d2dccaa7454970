//! RGB raster type and PNG/PPM input/output.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// An RGB image with channel values in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} channel values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "channel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A constant-color image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel. Values are clamped
    /// to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Self> {
        // to_rgb8 replicates a single luma channel into three.
        Self::from_rgb8(&img.to_rgb8())
    }

    /// Decodes PNG or PPM bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::EmptyImage);
        }
        Self::from_dynamic(img)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb_at(y * self.width + x)
    }

    #[inline]
    pub fn rgb_at(&self, idx: usize) -> [f64; 3] {
        let o = idx * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect()
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))
    }

    /// Bilinear resample to the given size (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let sy = (y as f64 + 0.5) * self.height as f64 / height as f64 - 0.5;
            for x in 0..width {
                let sx = (x as f64 + 0.5) * self.width as f64 / width as f64 - 0.5;
                data.extend(self.sample_bilinear(sx, sy));
            }
        }
        Self::new(width, height, data)
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.rgb(x0, y0);
        let b = self.rgb(x1, y0);
        let c = self.rgb(x0, y1);
        let d = self.rgb(x1, y1);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bot = c[k] * (1.0 - fx) + d[k] * fx;
            out[k] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
        }
        out
    }
}

/// Loads a PNG or 8-bit PPM/PGM file into a normalized RGB image.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    Image::decode(&bytes)
}

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit single-channel map (trimaps, alpha mattes).
pub fn load_gray(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::Decode(e.to_string()))?;
    let g = img.to_luma8();
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

pub fn decode_gray(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let g = img.to_luma8();
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

pub fn save_gray_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[u8],
) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or_else(|| Error::InvalidArgument("gray buffer length mismatch".into()))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))
}

pub fn encode_gray_png(width: usize, height: usize, values: &[u8]) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or_else(|| Error::InvalidArgument("gray buffer length mismatch".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(buf.into_inner())
}
