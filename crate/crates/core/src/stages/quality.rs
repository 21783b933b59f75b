use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Stage, StageError};
use crate::backends::{classify, Backend, Task, QUALITY_LABEL};
use crate::grid::PixelGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    /// Gradable iff score >= threshold.
    pub threshold: f64,
    pub max_attempts: u32,
    /// Per-feature floors below which a feature is reported as a reason.
    pub feature_floors: BTreeMap<String, f64>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_attempts: 3,
            feature_floors: [
                ("fov_coverage", 0.3),
                ("sharpness", 0.5),
                ("illumination_uniformity", 0.75),
                ("contrast", 0.08),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub gradable: bool,
    pub score: f64,
    pub reasons: Vec<String>,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecaptureDecision {
    Proceed,
    PromptRecapture,
    AbandonUngradable,
}

fn reason_for(feature: &str) -> String {
    match feature {
        "fov_coverage" => "low-fov-coverage".into(),
        "sharpness" => "blurred".into(),
        "illumination_uniformity" => "uneven-illumination".into(),
        "contrast" => "low-contrast".into(),
        other => format!("low-{other}"),
    }
}

fn reasons(details: &BTreeMap<String, f64>, cfg: &QualityConfig) -> Vec<String> {
    if details.get("no_fov").is_some_and(|v| *v > 0.0) {
        return vec!["no-fov".into()];
    }
    let mut weak: Vec<(f64, &str)> = cfg
        .feature_floors
        .iter()
        .filter_map(|(name, floor)| {
            let v = details.get(name)?;
            (*v < *floor && *floor > 0.0).then_some((v / floor, name.as_str()))
        })
        .collect();
    weak.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    if weak.is_empty() {
        return vec!["low-quality-score".into()];
    }
    weak.into_iter().map(|(_, n)| reason_for(n)).collect()
}

pub fn assess_quality(
    image: &PixelGrid,
    backend: &dyn Backend,
    cfg: &QualityConfig,
    attempt: u32,
) -> Result<QualityVerdict, StageError> {
    let scores = classify(backend, image, Task::Quality).map_err(StageError::backend(Stage::Quality))?;
    let score = scores.get(QUALITY_LABEL).expect("validated by classify");
    let gradable = score >= cfg.threshold;
    Ok(QualityVerdict {
        gradable,
        score,
        reasons: if gradable { Vec::new() } else { reasons(&scores.details, cfg) },
        attempt: attempt.max(1),
        details: scores.details,
    })
}

pub fn recapture_decision(verdict: &QualityVerdict, cfg: &QualityConfig) -> RecaptureDecision {
    if verdict.gradable {
        RecaptureDecision::Proceed
    } else if verdict.attempt < cfg.max_attempts {
        RecaptureDecision::PromptRecapture
    } else {
        RecaptureDecision::AbandonUngradable
    }
}
