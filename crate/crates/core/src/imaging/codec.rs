use std::io::Cursor;

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use super::ImagingError;
use crate::grid::{BinaryMask, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl From<ImageFormat> for image::ImageFormat {
    fn from(f: ImageFormat) -> Self {
        match f {
            ImageFormat::Png => image::ImageFormat::Png,
            ImageFormat::Jpeg => image::ImageFormat::Jpeg,
        }
    }
}

/// Decodes PNG or JPEG bytes. Grayscale sources stay single-channel, all
/// others become RGB; each 8-bit value `v` maps to `v / 255`.
pub fn decode(bytes: &[u8], format: ImageFormat) -> Result<PixelGrid, ImagingError> {
    let img = image::load_from_memory_with_format(bytes, format.into()).map_err(|e| ImagingError::Decode(e.to_string()))?;
    from_dynamic(img)
}

/// Decodes after sniffing the container; only PNG and JPEG are accepted.
pub fn decode_any(bytes: &[u8]) -> Result<PixelGrid, ImagingError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) => decode(bytes, ImageFormat::Png),
        Some(image::ImageFormat::Jpeg) => decode(bytes, ImageFormat::Jpeg),
        Some(other) => Err(ImagingError::Decode(format!("unsupported format {other:?}"))),
        None => Err(ImagingError::Decode("unrecognised image container".into())),
    }
}

fn from_dynamic(img: DynamicImage) -> Result<PixelGrid, ImagingError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    let grid = if gray {
        let buf = img.to_luma8();
        PixelGrid::new(w, h, 1, buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect())?
    } else {
        let buf = img.to_rgb8();
        PixelGrid::new(w, h, 3, buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect())?
    };
    Ok(grid)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG, gray or RGB matching the grid's channel count.
pub fn encode_png(grid: &PixelGrid) -> Result<Vec<u8>, ImagingError> {
    let bytes: Vec<u8> = grid.values().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let img = if grid.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer sized from grid"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer sized from grid"))
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Mask as a gray PNG with 0 / 255 pixels.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>, ImagingError> {
    let values = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    encode_png(&PixelGrid::from_raw(mask.width(), mask.height(), 1, values))
}
