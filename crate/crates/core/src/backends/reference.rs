//! Deterministic feature-based reference backend.
//!
//! Quality is a weighted sum of four image features measured inside the
//! field of view. Lesion evidence comes from a relative anomaly map: a
//! small-window local mean compared against a large-window background
//! mean, both restricted to FOV pixels. Blob-like structures the size of
//! the detail window stand out; thin strokes and slow vignetting do not.
//!
//! NOT a clinical model. It exists so the whole pipeline can run and be
//! tested without trained weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    all_capabilities, Backend, BackendDescriptor, BackendError, BackendKind, DiseaseLabel, ProbabilityMask, ScoreMap,
    Task, PVI_LABEL, QUALITY_LABEL,
};
use crate::grid::{BinaryMask, PixelGrid};
use crate::imaging::{extract_fov_with, FovConfig, ImagingError};

pub const REFERENCE_MODEL_ID: &str = "reference-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionConfig {
    /// Half-width of the detail window.
    pub detail_radius: usize,
    /// Half-width of the background window.
    pub background_radius: usize,
    /// Relative anomaly at which a pixel counts as lesion (probability 0.5).
    pub anomaly_threshold: f64,
    /// Logistic width mapping peak anomaly to a score.
    pub score_width: f64,
    /// Lower bound on the background luminance used as divisor.
    pub background_floor: f64,
}

impl Default for LesionConfig {
    fn default() -> Self {
        Self {
            detail_radius: 3,
            background_radius: 20,
            anomaly_threshold: 0.12,
            score_width: 0.03,
            background_floor: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub fov: FovConfig,
    /// Squashing constant: sharpness = s / (s + kappa).
    pub sharpness_kappa: f64,
    /// Weights for (coverage, sharpness, illumination uniformity, contrast).
    pub quality_weights: [f64; 4],
    pub lesion: LesionConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            fov: FovConfig::default(),
            sharpness_kappa: 0.005,
            quality_weights: [0.35, 0.30, 0.20, 0.15],
            lesion: LesionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityFeatures {
    pub fov_coverage: f64,
    pub sharpness: f64,
    pub illumination_uniformity: f64,
    pub contrast: f64,
}

impl QualityFeatures {
    pub fn score(&self, weights: &[f64; 4]) -> f64 {
        let f = [self.fov_coverage, self.sharpness, self.illumination_uniformity, self.contrast];
        f.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn as_details(&self) -> BTreeMap<String, f64> {
        [
            ("fov_coverage", self.fov_coverage),
            ("sharpness", self.sharpness),
            ("illumination_uniformity", self.illumination_uniformity),
            ("contrast", self.contrast),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

fn nearest_rank(sorted: &[f32], q: f64) -> f32 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[rank]
}

pub fn reference_quality_features(image: &PixelGrid, cfg: &ReferenceConfig) -> Result<QualityFeatures, ImagingError> {
    let fov = extract_fov_with(image, &cfg.fov)?;
    let lum = image.luminance();
    let (w, h) = (image.width(), image.height());
    let at = |x: isize, y: isize| -> f64 {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        lum[yy * w + xx] as f64
    };

    // 3x3 Laplacian variance inside the FOV
    let (mut n, mut sum, mut sum_sq) = (0f64, 0f64, 0f64);
    let mut inside = Vec::with_capacity(fov.mask.count());
    for y in 0..h {
        for x in 0..w {
            if !fov.mask.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let lap = at(xi + 1, yi) + at(xi - 1, yi) + at(xi, yi + 1) + at(xi, yi - 1) - 4.0 * at(xi, yi);
            n += 1.0;
            sum += lap;
            sum_sq += lap * lap;
            inside.push(lum[y * w + x]);
        }
    }
    let mean = sum / n;
    let variance = (sum_sq / n - mean * mean).max(0.0);
    let sharpness = variance / (variance + cfg.sharpness_kappa);

    // 8x8 grid of blocks; a block counts when at least half of it is FOV
    let mut block_means = Vec::with_capacity(64);
    for by in 0..8 {
        for bx in 0..8 {
            let (x0, x1) = (bx * w / 8, (bx + 1) * w / 8);
            let (y0, y1) = (by * h / 8, (by + 1) * h / 8);
            let total = (x1 - x0) * (y1 - y0);
            if total == 0 {
                continue;
            }
            let (mut cnt, mut acc) = (0usize, 0f64);
            for y in y0..y1 {
                for x in x0..x1 {
                    if fov.mask.get(x, y) {
                        cnt += 1;
                        acc += lum[y * w + x] as f64;
                    }
                }
            }
            if cnt * 2 >= total {
                block_means.push(acc / cnt as f64);
            }
        }
    }
    let illumination_uniformity = if block_means.is_empty() {
        0.0
    } else {
        let m = block_means.iter().sum::<f64>() / block_means.len() as f64;
        if m <= 0.0 {
            0.0
        } else {
            let var = block_means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / block_means.len() as f64;
            1.0 - (var.sqrt() / m).min(1.0)
        }
    };

    inside.sort_by(|a, b| a.total_cmp(b));
    let contrast = (nearest_rank(&inside, 0.95) - nearest_rank(&inside, 0.05)).clamp(0.0, 1.0) as f64;

    Ok(QualityFeatures {
        fov_coverage: fov.coverage,
        sharpness,
        illumination_uniformity,
        contrast,
    })
}

/// Relative local-contrast map; zero outside the FOV.
#[derive(Debug, Clone)]
pub struct AnomalyMap {
    pub width: usize,
    pub height: usize,
    /// `(detail - background) / background` per pixel.
    pub relative: Vec<f32>,
    pub fov: BinaryMask,
    pub contrast: f64,
    pub fov_coverage: f64,
}

impl AnomalyMap {
    pub fn peak_bright(&self) -> f64 {
        self.relative.iter().copied().fold(0.0, f32::max) as f64
    }

    pub fn peak_dark(&self) -> f64 {
        -(self.relative.iter().copied().fold(0.0, f32::min) as f64)
    }
}

struct MaskedIntegral {
    w: usize,
    h: usize,
    sum: Vec<f64>,
    count: Vec<f64>,
}

impl MaskedIntegral {
    fn new(values: &[f32], mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let stride = w + 1;
        let mut sum = vec![0f64; stride * (h + 1)];
        let mut count = vec![0f64; stride * (h + 1)];
        for y in 0..h {
            let (mut row_s, mut row_c) = (0f64, 0f64);
            for x in 0..w {
                if mask.get(x, y) {
                    row_s += values[y * w + x] as f64;
                    row_c += 1.0;
                }
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row_s;
                count[i] = count[i - stride] + row_c;
            }
        }
        Self { w, h, sum, count }
    }

    /// Mean of masked values within the clipped `(2r+1)²` window.
    fn mean(&self, x: usize, y: usize, r: usize) -> Option<f64> {
        let stride = self.w + 1;
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(self.h);
        let rect = |t: &[f64]| t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0];
        let c = rect(&self.count);
        (c > 0.5).then(|| rect(&self.sum) / c)
    }
}

pub fn lesion_anomaly_map(image: &PixelGrid, cfg: &ReferenceConfig) -> Result<AnomalyMap, ImagingError> {
    let fov = extract_fov_with(image, &cfg.fov)?;
    let lum = image.luminance();
    let (w, h) = (image.width(), image.height());
    let integral = MaskedIntegral::new(&lum, &fov.mask);
    let lc = &cfg.lesion;
    let mut relative = vec![0f32; w * h];
    let mut inside = Vec::with_capacity(fov.mask.count());
    for y in 0..h {
        for x in 0..w {
            if !fov.mask.get(x, y) {
                continue;
            }
            inside.push(lum[y * w + x]);
            let (Some(detail), Some(background)) =
                (integral.mean(x, y, lc.detail_radius), integral.mean(x, y, lc.background_radius))
            else {
                continue;
            };
            relative[y * w + x] = ((detail - background) / background.max(lc.background_floor)) as f32;
        }
    }
    inside.sort_by(|a, b| a.total_cmp(b));
    let contrast = (nearest_rank(&inside, 0.95) - nearest_rank(&inside, 0.05)).clamp(0.0, 1.0) as f64;
    Ok(AnomalyMap {
        width: w,
        height: h,
        relative,
        fov: fov.mask,
        contrast,
        fov_coverage: fov.coverage,
    })
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    config: ReferenceConfig,
}

impl Default for ReferenceBackend {
    fn default() -> Self {
        Self::new(ReferenceConfig::default())
    }
}

impl ReferenceBackend {
    pub fn new(config: ReferenceConfig) -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::Reference,
                model_id: REFERENCE_MODEL_ID.to_string(),
                capabilities: all_capabilities(),
                endpoint: None,
            },
            config,
        }
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    fn score_map(&self, entries: BTreeMap<String, f64>, details: BTreeMap<String, f64>) -> ScoreMap {
        ScoreMap {
            entries,
            model_id: self.descriptor.model_id.clone(),
            latency_ms: 0.0,
            details,
        }
    }

    fn evidence_score(&self, peak: f64) -> f64 {
        let lc = &self.config.lesion;
        logistic((peak - lc.anomaly_threshold) / lc.score_width)
    }

    fn edd_scores(&self, map: &AnomalyMap) -> BTreeMap<String, f64> {
        let bright = self.evidence_score(map.peak_bright());
        let dark = self.evidence_score(map.peak_dark());
        let any = bright.max(dark);
        // Fixed non-clinical mapping: bright focal anomalies read as AMD
        // (drusen-like), dark ones as DR (haemorrhage-like), a washed-out
        // frame as cataract haze. Glaucoma and MMD have no detector here.
        let probs = [
            (DiseaseLabel::Amd, bright),
            (DiseaseLabel::Cataract, logistic((0.08 - map.contrast) / 0.02)),
            (DiseaseLabel::Dr, dark),
            (DiseaseLabel::Glaucoma, 0.05),
            (DiseaseLabel::Mmd, 0.05 + 0.1 * (1.0 - map.fov_coverage).clamp(0.0, 1.0)),
            (DiseaseLabel::Others, 0.3 * any * (1.0 - (bright - dark).abs())),
        ];
        probs
            .into_iter()
            .map(|(l, p)| (l.as_str().to_string(), p.clamp(0.0, 1.0)))
            .collect()
    }
}

fn no_fov_details(coverage: f64) -> BTreeMap<String, f64> {
    [("no_fov".to_string(), 1.0), ("fov_coverage".to_string(), coverage)].into()
}

impl Backend for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classify_raw(&self, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError> {
        let cfg = &self.config;
        let map = match task {
            Task::Quality => {
                return Ok(match reference_quality_features(image, cfg) {
                    Ok(f) => self.score_map([(QUALITY_LABEL.into(), f.score(&cfg.quality_weights))].into(), f.as_details()),
                    Err(ImagingError::NoFov { coverage }) => {
                        self.score_map([(QUALITY_LABEL.into(), 0.0)].into(), no_fov_details(coverage))
                    }
                    Err(e) => {
                        return Err(BackendError::Remote {
                            backend: self.descriptor.model_id.clone(),
                            code: "internal".into(),
                            message: e.to_string(),
                        })
                    }
                });
            }
            Task::Pvi | Task::Edd => lesion_anomaly_map(image, cfg),
        };
        let map = match map {
            Ok(m) => m,
            Err(ImagingError::NoFov { coverage }) => {
                let entries = match task {
                    Task::Edd => DiseaseLabel::ALL.iter().map(|l| (l.as_str().to_string(), 0.0)).collect(),
                    _ => [(PVI_LABEL.to_string(), 0.0)].into(),
                };
                return Ok(self.score_map(entries, no_fov_details(coverage)));
            }
            Err(e) => {
                return Err(BackendError::Remote {
                    backend: self.descriptor.model_id.clone(),
                    code: "internal".into(),
                    message: e.to_string(),
                })
            }
        };
        let entries = match task {
            Task::Pvi => {
                let peak = map.peak_bright().max(map.peak_dark());
                [(PVI_LABEL.to_string(), self.evidence_score(peak))].into()
            }
            _ => self.edd_scores(&map),
        };
        let details = [
            ("peak_bright".to_string(), map.peak_bright()),
            ("peak_dark".to_string(), map.peak_dark()),
        ]
        .into();
        Ok(self.score_map(entries, details))
    }

    fn segment_raw(&self, image: &PixelGrid) -> Result<ProbabilityMask, BackendError> {
        let map = match lesion_anomaly_map(image, &self.config) {
            Ok(m) => m,
            Err(_) => return Ok(ProbabilityMask::zeros(image.width(), image.height())),
        };
        let scale = 1.0 / (2.0 * self.config.lesion.anomaly_threshold) as f32;
        let probs = map.relative.iter().map(|r| (r.abs() * scale).clamp(0.0, 1.0)).collect();
        Ok(ProbabilityMask::new(map.width, map.height, probs).expect("geometry from image"))
    }
}
