use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::grid::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub id: usize,
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Labels foreground pixels; label 0 is background, components are numbered
/// from 1 in raster order of their first pixel.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = comps.len() + 1;
        labels[start] = id as u32;
        queue.push_back(start);
        let mut bbox = BoundingBox {
            x0: start % w,
            y0: start / w,
            x1: start % w,
            y1: start / w,
        };
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = (i % w, i / w);
            bbox.x0 = bbox.x0.min(x);
            bbox.x1 = bbox.x1.max(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.y1 = bbox.y1.max(y);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = id as u32;
                    queue.push_back(j);
                }
            }
        }
        comps.push(Component { id, area, bbox });
    }
    (labels, comps)
}

/// 8-connected components.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    label_components(mask, Connectivity::Eight).1
}

/// Drops 8-connected components smaller than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let (labels, comps) = label_components(mask, Connectivity::Eight);
    let keep: Vec<bool> = std::iter::once(false).chain(comps.iter().map(|c| c.area >= min_area)).collect();
    BinaryMask::new(mask.width(), mask.height(), labels.iter().map(|&l| keep[l as usize]).collect())
        .expect("geometry preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&BinaryMask::empty(5, 5)).is_empty());
    }

    #[test]
    fn two_blobs() {
        let m = BinaryMask::from_fn(8, 4, |x, y| (y == 0 && x < 3) || (y == 3 && x >= 5));
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps.iter().map(|c| c.area).collect::<Vec<_>>(), vec![3, 3]);
        assert_eq!(comps[1].bbox, BoundingBox { x0: 5, y0: 3, x1: 7, y1: 3 });
    }

    #[test]
    fn diagonal_touch_is_one_component_under_eight() {
        let m = BinaryMask::from_fn(3, 3, |x, y| x == y);
        assert_eq!(connected_components(&m).len(), 1);
        assert_eq!(label_components(&m, Connectivity::Four).1.len(), 3);
    }

    #[test]
    fn small_components_are_removed() {
        let m = BinaryMask::from_fn(10, 10, |x, y| (x < 3 && y < 3) || (x == 9 && y == 9));
        let r = remove_small_components(&m, 2);
        assert_eq!(r.count(), 9);
        assert!(!r.get(9, 9));
    }
}
