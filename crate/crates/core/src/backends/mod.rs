//! Model backends: the classification heads (quality, PVI, disease
//! diagnosis) and the lesion segmenter, behind one trait.
//!
//! Two families implement [`Backend`]:
//! - [`ReferenceBackend`], a deterministic feature-based scorer that runs
//!   in-process. It is not a neural network and is not clinically validated.
//! - [`ExternalBackend`], a client for a model server speaking the framed
//!   JSON protocol in [`protocol`].

mod client;
pub mod protocol;
mod reference;
mod server;
mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::ExternalBackend;
pub use reference::{
    lesion_anomaly_map, reference_quality_features, LesionConfig, QualityFeatures, ReferenceBackend, ReferenceConfig,
    REFERENCE_MODEL_ID,
};
pub use server::{handle_payload, BackendServer, ModelRegistry, ServerHandle};
pub use stub::{ChannelProbeBackend, PROBE_MODEL_ID};

use crate::grid::PixelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Quality,
    Pvi,
    Edd,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Quality => "quality",
            Task::Pvi => "pvi",
            Task::Edd => "edd",
        }
    }

    pub fn capability(self) -> Capability {
        match self {
            Task::Quality => Capability::ClassifyQuality,
            Task::Pvi => Capability::ClassifyPvi,
            Task::Edd => Capability::ClassifyEdd,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Score label carried by the quality head.
pub const QUALITY_LABEL: &str = "gradable";
/// Score label carried by the PVI head.
pub const PVI_LABEL: &str = "pvi";

/// The fixed multi-label output space of the diagnosis head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiseaseLabel {
    #[serde(rename = "AMD")]
    Amd,
    Cataract,
    #[serde(rename = "DR")]
    Dr,
    Glaucoma,
    #[serde(rename = "MMD")]
    Mmd,
    Others,
}

impl DiseaseLabel {
    pub const ALL: [DiseaseLabel; 6] = [
        DiseaseLabel::Amd,
        DiseaseLabel::Cataract,
        DiseaseLabel::Dr,
        DiseaseLabel::Glaucoma,
        DiseaseLabel::Mmd,
        DiseaseLabel::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseLabel::Amd => "AMD",
            DiseaseLabel::Cataract => "Cataract",
            DiseaseLabel::Dr => "DR",
            DiseaseLabel::Glaucoma => "Glaucoma",
            DiseaseLabel::Mmd => "MMD",
            DiseaseLabel::Others => "Others",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for DiseaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    ClassifyQuality,
    ClassifyPvi,
    ClassifyEdd,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub capabilities: BTreeSet<Capability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_id.is_empty() {
            return Err(BackendError::InvalidDescriptor("model_id must not be empty".into()));
        }
        if self.kind == BackendKind::External && self.endpoint.as_deref().map_or(true, str::is_empty) {
            return Err(BackendError::InvalidDescriptor(format!(
                "external backend `{}` requires an endpoint",
                self.model_id
            )));
        }
        Ok(())
    }

    pub fn supports(&self, capability: Capability) -> bool {
        self.capabilities.contains(&capability)
    }
}

/// Label → score output of a classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub entries: BTreeMap<String, f64>,
    pub model_id: String,
    pub latency_ms: f64,
    /// Auxiliary diagnostics a backend may attach (e.g. quality features).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl ScoreMap {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.get(label).copied()
    }
}

/// Raw per-pixel lesion probabilities, before refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    probs: Vec<f32>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, probs: Vec<f32>) -> Result<Self, String> {
        if width == 0 || height == 0 {
            return Err(format!("mask geometry must be positive, got {width}x{height}"));
        }
        if probs.len() != width * height {
            return Err(format!("expected {} probabilities, got {}", width * height, probs.len()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        Ok(Self { width, height, probs })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            probs: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn max(&self) -> f32 {
        self.probs.iter().copied().fold(0.0, f32::max)
    }

    /// Pixels with probability `>= threshold`.
    pub fn binarize(&self, threshold: f32) -> crate::grid::BinaryMask {
        crate::grid::BinaryMask::new(self.width, self.height, self.probs.iter().map(|&p| p >= threshold).collect())
            .expect("geometry validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend `{backend}` does not support {what}")]
    Unsupported { backend: String, what: String },
    #[error("backend `{backend}` unavailable: {reason}")]
    Unavailable { backend: String, reason: String },
    #[error("backend `{backend}` timed out on task {task}")]
    Timeout { backend: String, task: String },
    #[error("malformed response from backend `{backend}`: {reason}")]
    MalformedResponse { backend: String, reason: String },
    #[error("backend `{backend}` returned error {code}: {message}")]
    Remote {
        backend: String,
        code: String,
        message: String,
    },
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
}

impl BackendError {
    /// Short machine-readable code.
    pub fn code(&self) -> &str {
        match self {
            BackendError::Unsupported { .. } => "unsupported",
            BackendError::Unavailable { .. } => "backend-unavailable",
            BackendError::Timeout { .. } => "backend-timeout",
            BackendError::MalformedResponse { .. } => "malformed-response",
            BackendError::Remote { code, .. } => code,
            BackendError::InvalidDescriptor(_) => "invalid-descriptor",
        }
    }
}

/// A model provider. Implementations must be pure functions of their
/// inputs and configuration, and shareable across threads.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Raw classification; callers should go through [`classify`], which
    /// checks capabilities and the reply schema.
    fn classify_raw(&self, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError>;

    fn segment_raw(&self, image: &PixelGrid) -> Result<ProbabilityMask, BackendError>;
}

/// Checks that a reply carries exactly the labels `task` requires, with
/// finite scores in `[0, 1]`.
pub fn validate_scores(backend: &str, task: Task, entries: &BTreeMap<String, f64>) -> Result<(), BackendError> {
    let malformed = |reason: String| BackendError::MalformedResponse {
        backend: backend.to_string(),
        reason,
    };
    let expected: Vec<&str> = match task {
        Task::Quality => vec![QUALITY_LABEL],
        Task::Pvi => vec![PVI_LABEL],
        Task::Edd => DiseaseLabel::ALL.iter().map(|l| l.as_str()).collect(),
    };
    for label in &expected {
        if !entries.contains_key(*label) {
            return Err(malformed(format!("{task} reply missing label `{label}`")));
        }
    }
    if let Some(extra) = entries.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(malformed(format!("{task} reply has unexpected label `{extra}`")));
    }
    if let Some((label, score)) = entries.iter().find(|(_, s)| !s.is_finite() || **s < 0.0 || **s > 1.0) {
        return Err(malformed(format!("score for `{label}` is {score}, outside [0, 1]")));
    }
    Ok(())
}

/// Runs a classification head, enforcing capability and reply schema and
/// stamping the observed latency.
pub fn classify(backend: &dyn Backend, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError> {
    let d = backend.descriptor();
    if !d.supports(task.capability()) {
        return Err(BackendError::Unsupported {
            backend: d.model_id.clone(),
            what: format!("task {task}"),
        });
    }
    let started = Instant::now();
    let mut scores = backend.classify_raw(image, task)?;
    validate_scores(&d.model_id, task, &scores.entries)?;
    scores.latency_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(scores)
}

/// Runs the segmenter; the returned mask always matches the image geometry.
pub fn segment(backend: &dyn Backend, image: &PixelGrid) -> Result<ProbabilityMask, BackendError> {
    let d = backend.descriptor();
    if !d.supports(Capability::Segment) {
        return Err(BackendError::Unsupported {
            backend: d.model_id.clone(),
            what: "segmentation".into(),
        });
    }
    let mask = backend.segment_raw(image)?;
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(BackendError::MalformedResponse {
            backend: d.model_id.clone(),
            reason: format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            ),
        });
    }
    Ok(mask)
}

pub(crate) fn all_capabilities() -> BTreeSet<Capability> {
    [
        Capability::ClassifyQuality,
        Capability::ClassifyPvi,
        Capability::ClassifyEdd,
        Capability::Segment,
    ]
    .into_iter()
    .collect()
}
