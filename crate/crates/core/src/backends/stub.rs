//! Deterministic probe backend: scores are read straight off the image's
//! channel means, so tests can script any verdict with a flat-colour frame.
//!
//! quality = mean of channel 0, pvi = mean of channel 1, AMD = mean of
//! channel 2 with the other diagnosis labels at 0.1, segmentation = the
//! per-pixel value of channel 2. Gray images use channel 0 throughout.

use std::collections::BTreeMap;

use super::{
    all_capabilities, Backend, BackendDescriptor, BackendError, BackendKind, DiseaseLabel, ProbabilityMask, ScoreMap,
    Task, PVI_LABEL, QUALITY_LABEL,
};
use crate::grid::PixelGrid;

pub const PROBE_MODEL_ID: &str = "channel-probe-v1";

#[derive(Debug, Clone)]
pub struct ChannelProbeBackend {
    descriptor: BackendDescriptor,
}

impl Default for ChannelProbeBackend {
    fn default() -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::Reference,
                model_id: PROBE_MODEL_ID.into(),
                capabilities: all_capabilities(),
                endpoint: None,
            },
        }
    }
}

fn channel_mean(image: &PixelGrid, c: usize) -> f64 {
    let c = if image.channels() == 1 { 0 } else { c };
    let sum: f64 = image.values().iter().skip(c).step_by(image.channels()).map(|&v| v as f64).sum();
    (sum / image.pixel_count() as f64).clamp(0.0, 1.0)
}

impl Backend for ChannelProbeBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classify_raw(&self, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError> {
        let entries: BTreeMap<String, f64> = match task {
            Task::Quality => [(QUALITY_LABEL.to_string(), channel_mean(image, 0))].into(),
            Task::Pvi => [(PVI_LABEL.to_string(), channel_mean(image, 1))].into(),
            Task::Edd => DiseaseLabel::ALL
                .iter()
                .map(|l| {
                    let p = if *l == DiseaseLabel::Amd { channel_mean(image, 2) } else { 0.1 };
                    (l.as_str().to_string(), p)
                })
                .collect(),
        };
        Ok(ScoreMap {
            entries,
            model_id: self.descriptor.model_id.clone(),
            latency_ms: 0.0,
            details: BTreeMap::new(),
        })
    }

    fn segment_raw(&self, image: &PixelGrid) -> Result<ProbabilityMask, BackendError> {
        let c = if image.channels() == 1 { 0 } else { 2 };
        let probs = image.values().iter().skip(c).step_by(image.channels()).copied().collect();
        Ok(ProbabilityMask::new(image.width(), image.height(), probs).expect("geometry from image"))
    }
}
