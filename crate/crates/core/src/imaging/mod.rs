//! Images, preprocessing, color conversion and quality metrics.

mod color;
mod io;
mod metrics;
mod pad;
mod resize;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Shape, Tensor};

pub use color::{lab_to_srgb_pixel, srgb_to_lab, srgb_to_lab_pixel, Lab};
pub use io::{load_image, save_image};
pub use metrics::{
    lab_l2_error, lab_l2_sum, psnr, ssim, MetricsRecord, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use pad::{pad_to_square, PaddedImage};
pub use resize::resize_longer_edge;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: cannot decode image: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("{path}: cannot encode image: {detail}")]
    Encode { path: PathBuf, detail: String },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("image of {width}x{height} does not fit in {limit}x{limit}")]
    TooLarge {
        width: usize,
        height: usize,
        limit: usize,
    },
    #[error("valid region has no {window}x{window} window")]
    RegionSmallerThanWindow { window: usize },
    #[error("mask has no valid pixels")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

/// RGB image with values nominally in `[0, 1]`, stored as three planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(ImagingError::Invalid(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _, c| rgb[c])
    }

    /// Builds an image from `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// From interleaved `RGBRGB...` samples.
    pub fn from_interleaved(width: usize, height: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(ImagingError::Invalid(format!(
                "expected {} interleaved samples, got {}",
                3 * width * height,
                rgb.len()
            )));
        }
        Ok(Self::from_fn(width, height, |x, y, c| {
            rgb[(y * width + x) * 3 + c]
        }))
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                out.extend(self.pixel(x, y));
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [self.get(x, y, 0), self.get(x, y, 1), self.get(x, y, 2)]
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(ImagingError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Clamps to `[0, 1]` and snaps to the nearest 8-bit level.
    pub fn quantized8(&self) -> Image {
        self.map(|v| quantize8(v) as f64 / 255.0)
    }

    /// Top-left `width x height` sub-image.
    pub fn crop(&self, width: usize, height: usize) -> Result<Image> {
        if width > self.width || height > self.height {
            return Err(ImagingError::Invalid(format!(
                "crop {width}x{height} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(width, height, |x, y, c| self.get(x, y, c)))
    }

    /// Batch-of-one tensor `(1, 3, h, w)`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, 3, self.height, self.width), self.data.clone())
            .expect("planar layout")
    }

    /// Extracts batch element `index` of a 3-channel tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Image> {
        let s = t.shape();
        if s.c != 3 || index >= s.n {
            return Err(ImagingError::Invalid(format!(
                "cannot take RGB image {index} from tensor of shape {s}"
            )));
        }
        Image::new(s.w, s.h, t.batch_item(index).into_data())
    }
}

/// `round(clamp(v, 0, 1) * 255)` with halves rounded away from zero.
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary validity mask over image positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    /// Mask whose valid pixels form the top-left `valid_w x valid_h` rectangle.
    pub fn top_left(width: usize, height: usize, valid_w: usize, valid_h: usize) -> Self {
        let mut data = vec![false; width * height];
        for y in 0..valid_h.min(height) {
            for x in 0..valid_w.min(width) {
                data[y * width + x] = true;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// `(1, channels, h, w)` tensor of ones and zeros.
    pub fn to_tensor(&self, channels: usize) -> Tensor {
        let plane = self.width * self.height;
        Tensor::from_fn(Shape::new(1, channels, self.height, self.width), |i| {
            if self.data[i % plane] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub(crate) fn check_size(&self, image: &Image) -> Result<()> {
        if (self.width, self.height) != (image.width(), image.height()) {
            return Err(ImagingError::DimensionMismatch {
                left_w: image.width(),
                left_h: image.height(),
                right_w: self.width,
                right_h: self.height,
            });
        }
        Ok(())
    }
}
