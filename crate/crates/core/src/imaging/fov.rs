//! Field-of-view extraction: the illuminated disc of a fundus photo.
//!
//! Recipe: threshold luminance at a fraction of its 99th percentile, keep
//! the largest 4-connected region, fill its holes, then erode by a safety
//! margin. This is a stand-in for the photo-processing branch of lesion
//! visualization; nothing here localizes anatomy.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::components::{label_components, Connectivity};
use super::morphology::{erode, StructuringElement};
use super::ImagingError;
use crate::grid::{BinaryMask, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FovConfig {
    /// Fraction of the 99th-percentile luminance used as the FOV threshold.
    pub threshold_fraction: f64,
    /// Erosion margin in pixels at working resolution.
    pub margin: usize,
    pub min_coverage: f64,
}

impl Default for FovConfig {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.06,
            margin: 3,
            min_coverage: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FovInfo {
    pub mask: BinaryMask,
    /// Mask centroid, in pixel coordinates.
    pub center: (f64, f64),
    /// Radius of the smallest centroid-centred circle covering the mask.
    pub radius: f64,
    pub coverage: f64,
}

pub fn extract_fov(grid: &PixelGrid) -> Result<FovInfo, ImagingError> {
    extract_fov_with(grid, &FovConfig::default())
}

fn percentile(values: &[f32], q: f64) -> f32 {
    let mut v = values.to_vec();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    let (_, nth, _) = v.select_nth_unstable_by(rank, |a, b| a.total_cmp(b));
    *nth
}

fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, comps) = label_components(mask, Connectivity::Four);
    let Some(best) = comps.iter().max_by_key(|c| (c.area, std::cmp::Reverse(c.id))) else {
        return BinaryMask::empty(mask.width(), mask.height());
    };
    let id = best.id as u32;
    BinaryMask::new(mask.width(), mask.height(), labels.iter().map(|&l| l == id).collect()).expect("same geometry")
}

/// Fills background regions not 4-connected to the frame border.
pub(crate) fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            let i = y * w + x;
            if border && !mask.bits()[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !outside[j] && !mask.bits()[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    BinaryMask::new(w, h, outside.into_iter().map(|o| !o).collect()).expect("same geometry")
}

pub fn extract_fov_with(grid: &PixelGrid, cfg: &FovConfig) -> Result<FovInfo, ImagingError> {
    let (w, h) = (grid.width(), grid.height());
    let lum = grid.luminance();
    let p99 = percentile(&lum, 0.99);
    if p99 <= 0.0 {
        return Err(ImagingError::NoFov { coverage: 0.0 });
    }
    let threshold = (cfg.threshold_fraction * p99 as f64) as f32;
    let raw = BinaryMask::new(w, h, lum.iter().map(|&v| v > threshold).collect()).expect("same geometry");
    let mut mask = fill_holes(&largest_component(&raw));
    if cfg.margin > 0 {
        mask = largest_component(&erode(&mask, &StructuringElement::disc(cfg.margin)));
    }

    let area = mask.count();
    let coverage = area as f64 / (w * h) as f64;
    if area == 0 || coverage < cfg.min_coverage {
        return Err(ImagingError::NoFov { coverage });
    }
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    let center = (sx / area as f64, sy / area as f64);
    let mut r2: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                r2 = r2.max((x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2));
            }
        }
    }
    Ok(FovInfo {
        mask,
        center,
        radius: r2.sqrt(),
        coverage,
    })
}
