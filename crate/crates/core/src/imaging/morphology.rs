//! Binary morphology with disc structuring elements.
//!
//! The frame is treated as a window onto an infinite background plane:
//! erosion sees out-of-frame pixels as false, and closing is computed on a
//! padded canvas so that it stays extensive at the borders.

use crate::grid::BinaryMask;

/// Centred digital disc: offsets `(dx, dy)` with `dx² + dy² <= r²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    radius: usize,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn disc(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        let r = radius as isize;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    offsets.push((dx, dy));
                }
            }
        }
        Self { radius, offsets }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode_with_border(mask, se, false)
}

/// Erosion with out-of-frame pixels read as `outside`. Eroding a
/// complement needs `outside = true`, since the complement of the
/// background plane is foreground.
pub fn erode_with_border(mask: &BinaryMask, se: &StructuringElement, outside: bool) -> BinaryMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        mask.get(x, y)
            && se.offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    outside
                } else {
                    mask.get(nx as usize, ny as usize)
                }
            })
    })
}

pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &se.offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let pad = se.radius;
    let (w, h) = (mask.width(), mask.height());
    let padded = BinaryMask::from_fn(w + 2 * pad, h + 2 * pad, |x, y| {
        x >= pad && y >= pad && x < w + pad && y < h + pad && mask.get(x - pad, y - pad)
    });
    let dilated = dilate(&padded, se);
    // only frame pixels are eroded; their windows stay on the padded canvas
    BinaryMask::from_fn(w, h, |x, y| {
        let (px, py) = ((x + pad) as isize, (y + pad) as isize);
        se.offsets
            .iter()
            .all(|&(dx, dy)| dilated.get_or_false(px + dx, py + dy))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_radius_one_is_plus() {
        let se = StructuringElement::disc(1);
        assert_eq!(se.offsets().len(), 5);
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, &se);
        assert_eq!(d.count(), 5);
        for (x, y) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
            assert!(d.get(x, y));
        }
    }

    #[test]
    fn erosion_at_border_sees_background() {
        let full = BinaryMask::full(6, 6);
        let e = erode(&full, &StructuringElement::disc(1));
        assert_eq!(e.count(), 16);
    }

    #[test]
    fn closing_fills_gap_and_keeps_border_pixels() {
        let m = BinaryMask::from_fn(7, 3, |x, _| x != 3);
        let c = close(&m, &StructuringElement::disc(1));
        assert!(m.is_subset_of(&c));
        assert!(c.get(3, 1));
    }

    #[test]
    fn opening_removes_speckle() {
        let mut m = BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        m.set(0, 0, true);
        m.set(18, 2, true);
        let o = open(&m, &StructuringElement::disc(2));
        assert!(!o.get(0, 0) && !o.get(18, 2));
        assert!(o.get(10, 10));
    }
}
