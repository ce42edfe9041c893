//! Image, disparity and label containers plus patch grids.

mod pnm;
mod sample;

pub use pnm::{load_label_pgm, load_pfm, load_pgm, save_label_pgm, save_pfm, save_pgm};
pub use sample::{bilinear_sample, CubicRow};

use crate::error::{Error, Result};
use crate::geometry::PatchSpec;

/// Row-major grayscale image with floating-point samples.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    /// Nominal full-scale value (255 for 8-bit, 4095 for 12-bit sources).
    pub maxval: u16,
    pub data: Vec<f32>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} samples for a {width}x{height} image", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("image contains non-finite samples".into()));
        }
        Ok(Self { width, height, maxval, data })
    }

    pub fn filled(width: usize, height: usize, maxval: u16, value: f32) -> Self {
        Self { width, height, maxval, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, maxval: u16, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, maxval, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 2x2 box average.
    pub fn downsample2(&self) -> Result<Self> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::OddDimensions { width: self.width, height: self.height });
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let data = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| {
                    let (x2, y2) = (2 * x, 2 * y);
                    let s = self.get(x2, y2) as f64
                        + self.get(x2 + 1, y2) as f64
                        + self.get(x2, y2 + 1) as f64
                        + self.get(x2 + 1, y2 + 1) as f64;
                    (s * 0.25) as f32
                })
            })
            .collect();
        Ok(Self { width: w, height: h, maxval: self.maxval, data })
    }
}

/// Dense disparity map; invalid entries hold `NaN`.
#[derive(Clone, Debug)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl PartialEq for DisparityMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl DisparityMap {
    pub const INVALID: f32 = f32::NAN;

    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![Self::INVALID; width * height] }
    }

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} disparities for a {width}x{height} map", data.len())));
        }
        // anything that is not a positive finite value is normalized to the sentinel
        let data = data.into_iter().map(|d| if d.is_finite() && d > 0.0 { d } else { Self::INVALID }).collect();
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.data[y * self.width + x];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: Option<f64>) {
        self.data[y * self.width + x] = match d {
            Some(v) if v.is_finite() && v > 0.0 => v as f32,
            _ => Self::INVALID,
        };
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite() && **d > 0.0).count()
    }

    /// Nearest-neighbor upsampling by an integer factor; disparities scale along.
    pub fn upsample(&self, factor: usize) -> Self {
        let f = factor.max(1);
        let mut out = Self::invalid(self.width * f, self.height * f);
        for y in 0..out.height {
            for x in 0..out.width {
                out.set(x, y, self.get(x / f, y / f).map(|d| d * f as f64));
            }
        }
        out
    }

    /// Halves resolution; each output is half the mean of the valid inputs.
    pub fn downsample2(&self) -> Result<Self> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::OddDimensions { width: self.width, height: self.height });
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Self::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let vals: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .filter_map(|(dx, dy)| self.get(2 * x + dx, 2 * y + dy))
                    .collect();
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    out.set(x, y, Some(mean * 0.5));
                }
            }
        }
        Ok(out)
    }
}

/// Label ids: 0 unlabeled, 1 free space, >= 2 obstacle instance.
pub const LABEL_UNLABELED: u16 = 0;
pub const LABEL_FREE_SPACE: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} labels for a {width}x{height} map", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn unlabeled(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![LABEL_UNLABELED; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u16) {
        self.data[y * self.width + x] = id;
    }

    pub fn is_obstacle(id: u16) -> bool {
        id >= 2
    }

    pub fn obstacle_pixels(&self) -> usize {
        self.data.iter().filter(|&&id| Self::is_obstacle(id)).count()
    }

    pub fn free_space_pixels(&self) -> usize {
        self.data.iter().filter(|&&id| id == LABEL_FREE_SPACE).count()
    }

    /// Sorted obstacle instance ids present in the map.
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.data.iter().copied().filter(|&id| Self::is_obstacle(id)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn free_space_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&id| id == LABEL_FREE_SPACE).collect()
    }
}

/// Regular grid of patch centers at a fixed stride.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub stride: usize,
    /// Downsampling factor of the images the grid lives on.
    pub downsample: usize,
    pub patch_w: usize,
    pub patch_h: usize,
    pub centers: Vec<(usize, usize)>,
}

impl PatchGrid {
    /// Centers are the multiples of `stride` that keep the patch in bounds,
    /// ordered row-major.
    pub fn new(
        width: usize,
        height: usize,
        patch_w: usize,
        patch_h: usize,
        stride: usize,
        downsample: usize,
    ) -> Result<Self> {
        PatchSpec::new(0, 0, patch_w, patch_h)?;
        if stride == 0 || downsample == 0 {
            return Err(Error::InvalidConfig("stride and downsample must be positive".into()));
        }
        let first = |half: usize| half.div_ceil(stride) * stride;
        let (hw, hh) = (patch_w / 2, patch_h / 2);
        let mut centers = Vec::new();
        let mut y = first(hh);
        while y + hh < height {
            let mut x = first(hw);
            while x + hw < width {
                centers.push((x, y));
                x += stride;
            }
            y += stride;
        }
        Ok(Self { stride, downsample, patch_w, patch_h, centers })
    }

    pub fn patch(&self, index: usize) -> PatchSpec {
        let (xc, yc) = self.centers[index];
        PatchSpec { xc, yc, w: self.patch_w, h: self.patch_h }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}
