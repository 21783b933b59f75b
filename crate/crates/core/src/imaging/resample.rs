use super::ImagingError;
use crate::grid::PixelGrid;

/// Bilinear sample with pixel centres at integer coordinates. Neighbours
/// outside the frame contribute zero.
fn sample_zero_fill(grid: &PixelGrid, sx: f64, sy: f64, c: usize) -> f32 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let px = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            grid.get(x as usize, y as usize, c) as f64
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0) as f32
}

/// Bilinear resize with edge clamping; pixel centres are aligned so that a
/// same-size resize is the identity.
pub fn resize(grid: &PixelGrid, width: usize, height: usize) -> PixelGrid {
    assert!(width > 0 && height > 0, "resize target must be non-empty");
    if width == grid.width() && height == grid.height() {
        return grid.clone();
    }
    let (sw, sh, ch) = (grid.width(), grid.height(), grid.channels());
    let sx_scale = sw as f64 / width as f64;
    let sy_scale = sh as f64 / height as f64;
    let mut values = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            for c in 0..ch {
                let top = grid.get(x0, y0, c) as f64 * (1.0 - fx) + grid.get(x1, y0, c) as f64 * fx;
                let bot = grid.get(x0, y1, c) as f64 * (1.0 - fx) + grid.get(x1, y1, c) as f64 * fx;
                values.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32);
            }
        }
    }
    PixelGrid::from_raw(width, height, ch, values)
}

pub fn gamma_correct(grid: &PixelGrid, gamma: f64) -> Result<PixelGrid, ImagingError> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(ImagingError::BadGamma(gamma));
    }
    let values = grid
        .values()
        .iter()
        .map(|&v| (v as f64).powf(gamma).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(PixelGrid::from_raw(grid.width(), grid.height(), grid.channels(), values))
}

pub fn flip_h(grid: &PixelGrid) -> PixelGrid {
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let mut values = Vec::with_capacity(grid.values().len());
    for y in 0..h {
        for x in (0..w).rev() {
            for c in 0..ch {
                values.push(grid.get(x, y, c));
            }
        }
    }
    PixelGrid::from_raw(w, h, ch, values)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Rotates counter-clockwise (as displayed) about the frame centre.
/// Pixels mapped from outside the frame are zero.
pub fn rotate(grid: &PixelGrid, degrees: f64) -> PixelGrid {
    let theta = degrees.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut values = Vec::with_capacity(grid.values().len());
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = snap(cx + cos * dx - sin * dy);
            let sy = snap(cy + sin * dx + cos * dy);
            for c in 0..ch {
                values.push(sample_zero_fill(grid, sx, sy, c));
            }
        }
    }
    PixelGrid::from_raw(w, h, ch, values)
}

/// Zooms by `factor` about the frame centre, keeping the frame size.
pub fn scale_about_center(grid: &PixelGrid, factor: f64) -> PixelGrid {
    assert!(factor.is_finite() && factor > 0.0, "scale factor must be positive");
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut values = Vec::with_capacity(grid.values().len());
    for y in 0..h {
        for x in 0..w {
            let sx = snap(cx + (x as f64 - cx) / factor);
            let sy = snap(cy + (y as f64 - cy) / factor);
            for c in 0..ch {
                values.push(sample_zero_fill(grid, sx, sy, c));
            }
        }
    }
    PixelGrid::from_raw(w, h, ch, values)
}

/// Separable mean filter over a `(2r+1)²` window with edge clamping.
pub fn box_blur(grid: &PixelGrid, radius: usize) -> PixelGrid {
    if radius == 0 {
        return grid.clone();
    }
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0f32; grid.values().len()];
    for y in 0..h {
        for c in 0..ch {
            for x in 0..w {
                let mut acc = 0.0f64;
                for k in -(radius as isize)..=radius as isize {
                    let xx = (x as isize + k).clamp(0, w as isize - 1) as usize;
                    acc += grid.get(xx, y, c) as f64;
                }
                tmp[(y * w + x) * ch + c] = (acc * norm) as f32;
            }
        }
    }
    let mut out = vec![0f32; tmp.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for k in -(radius as isize)..=radius as isize {
                    let yy = (y as isize + k).clamp(0, h as isize - 1) as usize;
                    acc += tmp[(yy * w + x) * ch + c] as f64;
                }
                out[(y * w + x) * ch + c] = (acc * norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    PixelGrid::from_raw(w, h, ch, out)
}
