use serde::{Deserialize, Serialize};

use crate::grid::{BinaryMask, GridError, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb(pub f32, pub f32, pub f32);

impl Rgb {
    fn channel(&self, c: usize) -> f32 {
        match c {
            0 => self.0,
            1 => self.1,
            _ => self.2,
        }
    }
}

fn mismatch(grid: &PixelGrid, mask: &BinaryMask) -> GridError {
    GridError::GeometryMismatch {
        left_w: grid.width(),
        left_h: grid.height(),
        right_w: mask.width(),
        right_h: mask.height(),
    }
}

/// Blends `color` into masked pixels: `v' = (1 - alpha) v + alpha color`.
/// The output is always RGB; unmasked pixels keep their values.
pub fn overlay(grid: &PixelGrid, mask: &BinaryMask, color: Rgb, alpha: f32) -> Result<PixelGrid, GridError> {
    if grid.width() != mask.width() || grid.height() != mask.height() {
        return Err(mismatch(grid, mask));
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let mut values = grid.to_rgb().into_values();
    for (i, &on) in mask.bits().iter().enumerate() {
        if !on {
            continue;
        }
        for c in 0..3 {
            let v = &mut values[i * 3 + c];
            *v = if alpha == 1.0 {
                color.channel(c)
            } else {
                ((1.0 - alpha) * *v + alpha * color.channel(c)).clamp(0.0, 1.0)
            };
        }
    }
    Ok(PixelGrid::from_raw(grid.width(), grid.height(), 3, values))
}

/// Mask pixels with at least one 4-neighbour outside the mask (or frame).
pub fn draw_contour(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        mask.get_or_false(x, y)
            && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| !mask.get_or_false(x + dx, y + dy))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PixelGrid {
        PixelGrid::from_fn(4, 4, 3, |x, y, c| ((x + y + c) % 5) as f32 / 5.0).unwrap()
    }

    #[test]
    fn alpha_zero_is_original() {
        let m = BinaryMask::full(4, 4);
        assert_eq!(overlay(&grid(), &m, Rgb(1.0, 0.0, 0.0), 0.0).unwrap(), grid());
    }

    #[test]
    fn alpha_one_paints_exact_color() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x == 1);
        let o = overlay(&grid(), &m, Rgb(0.9, 0.1, 0.2), 1.0).unwrap();
        assert_eq!((o.get(1, 2, 0), o.get(1, 2, 1), o.get(1, 2, 2)), (0.9, 0.1, 0.2));
        assert_eq!(o.get(0, 2, 0), grid().get(0, 2, 0));
    }

    #[test]
    fn empty_mask_is_original() {
        let o = overlay(&grid(), &BinaryMask::empty(4, 4), Rgb(1.0, 1.0, 1.0), 0.5).unwrap();
        assert_eq!(o, grid());
    }

    #[test]
    fn geometry_mismatch() {
        assert!(overlay(&grid(), &BinaryMask::empty(3, 4), Rgb(0.0, 0.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn contour_of_square_is_its_ring() {
        let m = BinaryMask::from_fn(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        assert_eq!(draw_contour(&m).count(), 12);
    }
}
