//! Raster operations used by the screening stages.

mod codec;
mod components;
mod fov;
mod morphology;
mod overlay;
mod resample;

pub use codec::{decode, decode_any, encode_mask_png, encode_png, ImageFormat};
pub use components::{
    connected_components, label_components, remove_small_components, BoundingBox, Component, Connectivity,
};
pub use fov::{extract_fov, extract_fov_with, FovConfig, FovInfo};
pub use morphology::{close, dilate, erode, erode_with_border, open, StructuringElement};
pub use overlay::{draw_contour, overlay, Rgb};
pub use resample::{box_blur, flip_h, gamma_correct, resize, rotate, scale_about_center};

use thiserror::Error;

use crate::grid::GridError;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("gamma must be finite and > 0, got {0}")]
    BadGamma(f64),
    #[error("no usable field of view (coverage {coverage:.4})")]
    NoFov { coverage: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}
