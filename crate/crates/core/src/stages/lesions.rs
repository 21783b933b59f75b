//! Lesion-region visualization: the segmenter's raw output is binarized,
//! restricted to the field of view, opened to strip speckle, and pruned of
//! components too small to matter. Intersection, opening and area pruning
//! is our reading of how segmentation and photo morphology are combined.

use serde::{Deserialize, Serialize};

use super::{PviResult, Stage, StageError};
use crate::backends::{segment, Backend, ProbabilityMask};
use crate::grid::{BinaryMask, PixelGrid};
use crate::imaging::{
    connected_components, draw_contour, extract_fov_with, open, overlay, remove_small_components, FovConfig,
    ImagingError, Rgb, StructuringElement,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VlrConfig {
    pub binarize_threshold: f32,
    pub open_radius: usize,
    /// Minimum component area as a fraction of FOV area.
    pub min_area_fraction: f64,
    pub fill_alpha: f32,
    pub fill_color: Rgb,
    pub contour_color: Rgb,
    pub fov: FovConfig,
}

impl Default for VlrConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            open_radius: 2,
            min_area_fraction: 0.0005,
            fill_alpha: 0.35,
            fill_color: Rgb(1.0, 0.85, 0.0),
            contour_color: Rgb(1.0, 0.1, 0.1),
            fov: FovConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionComponent {
    pub area: usize,
    pub bbox: crate::imaging::BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionVisualization {
    pub raw: ProbabilityMask,
    pub refined: BinaryMask,
    /// RGB rendering at the original capture resolution.
    pub overlay: PixelGrid,
    pub components: Vec<LesionComponent>,
}

/// `remove_small(open(binarize(raw) ∩ fov))`. Contractive and idempotent.
pub fn refine_mask(raw: &ProbabilityMask, fov: &BinaryMask, cfg: &VlrConfig) -> Result<BinaryMask, StageError> {
    let bin = raw.binarize(cfg.binarize_threshold);
    let inside = bin.and(fov).map_err(|e| StageError::Imaging(e.to_string()))?;
    let opened = if cfg.open_radius > 0 {
        open(&inside, &StructuringElement::disc(cfg.open_radius))
    } else {
        inside
    };
    let min_area = ((cfg.min_area_fraction * fov.count() as f64).ceil() as usize).max(1);
    Ok(remove_small_components(&opened, min_area))
}

fn render(original: &PixelGrid, refined: &BinaryMask, cfg: &VlrConfig) -> PixelGrid {
    let mask = refined.resize_nearest(original.width(), original.height());
    let filled = overlay(original, &mask, cfg.fill_color, cfg.fill_alpha).expect("mask resized to image");
    overlay(&filled, &draw_contour(&mask), cfg.contour_color, 1.0).expect("same geometry")
}

/// `working` is the image at working resolution (what the segmenter sees);
/// `original` is the capture as acquired, used for the overlay.
pub fn visualize_lesions(
    working: &PixelGrid,
    original: &PixelGrid,
    backend: &dyn Backend,
    cfg: &VlrConfig,
    pvi: Option<&PviResult>,
) -> Result<LesionVisualization, StageError> {
    if !pvi.is_some_and(|p| p.decision) {
        return Err(StageError::NotGated(Stage::Vlr));
    }
    let fov = match extract_fov_with(working, &cfg.fov) {
        Ok(f) => f,
        Err(ImagingError::NoFov { coverage }) => return Err(StageError::NoFov { coverage }),
        Err(e) => return Err(StageError::Imaging(e.to_string())),
    };
    let raw = segment(backend, working).map_err(StageError::backend(Stage::Vlr))?;
    let refined = refine_mask(&raw, &fov.mask, cfg)?;
    let components = connected_components(&refined)
        .into_iter()
        .map(|c| LesionComponent {
            area: c.area,
            bbox: c.bbox,
        })
        .collect();
    Ok(LesionVisualization {
        overlay: render(original, &refined, cfg),
        raw,
        refined,
        components,
    })
}
