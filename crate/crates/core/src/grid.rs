//! Raster substrate shared by every stage: intensity grids and boolean masks.

use thiserror::Error;

/// Rec. 601 luma weights used whenever an RGB grid is reduced to one channel.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGeometry { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("expected {expected} values, got {actual}")]
    ValueCount { expected: usize, actual: usize },
    #[error("value at index {index} is {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("geometry mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    GeometryMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
}

/// Row-major image with 1 (gray) or 3 (RGB) interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGeometry { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(GridError::Channels(channels));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(GridError::ValueCount {
                expected,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(GridError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    /// A grid filled with one value on every channel. `value` is clamped into `[0, 1]`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self, GridError> {
        let v = if value.is_finite() { value.clamp(0.0, 1.0) } else { 0.0 };
        Self::new(width, height, channels, vec![v; width * height * channels])
    }

    /// Builds a grid from a per-pixel closure. Outputs are clamped into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    values.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self::new(width, height, channels, values)
    }

    // Used by in-crate transforms whose outputs are in range by construction.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            values,
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

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel luminance, row-major.
    pub fn luminance(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.values.clone();
        }
        self.values
            .chunks_exact(3)
            .map(|px| (LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]).clamp(0.0, 1.0))
            .collect()
    }

    pub fn to_gray(&self) -> PixelGrid {
        Self::from_raw(self.width, self.height, 1, self.luminance())
    }

    pub fn to_rgb(&self) -> PixelGrid {
        if self.channels == 3 {
            return self.clone();
        }
        let values = self.values.iter().flat_map(|&v| [v, v, v]).collect();
        Self::from_raw(self.width, self.height, 3, values)
    }

    pub fn same_geometry(&self, other: &PixelGrid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGeometry { width, height });
        }
        if bits.len() != width * height {
            return Err(GridError::ValueCount {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    /// All-false mask. Panics on zero geometry.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask geometry must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::empty(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-frame coordinates read as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_geometry(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check(&self, other: &BinaryMask) -> Result<(), GridError> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(GridError::GeometryMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, GridError> {
        self.check(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, GridError> {
        self.check(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn not(&self) -> BinaryMask {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// `self ⊆ other`. False when geometries differ.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_geometry(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Nearest-neighbour resample to a new geometry.
    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        if width == self.width && height == self.height {
            return self.clone();
        }
        BinaryMask::from_fn(width, height, |x, y| {
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
            self.get(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }
}
