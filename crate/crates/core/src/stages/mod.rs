//! The four screening stages: quality gate with re-capture policy, PVI
//! detection at a calibrated operating point, gated multi-label diagnosis
//! and lesion-region visualization.

mod calibration;
mod diagnosis;
mod lesions;
mod pvi;
mod quality;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{calibrate_operating_point, OperatingPoint, Policy, TARGET_UNATTAINED};
pub use diagnosis::{diagnose, DiagnosisConfig, DiagnosisVector};
pub use lesions::{refine_mask, visualize_lesions, LesionComponent, LesionVisualization, VlrConfig};
pub use pvi::{detect_pvi, PviResult};
pub use quality::{assess_quality, recapture_decision, QualityConfig, QualityVerdict, RecaptureDecision};

pub use crate::backends::DiseaseLabel;
use crate::backends::BackendError;
use crate::metrics::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Quality,
    Pvi,
    Edd,
    Vlr,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Quality => "quality",
            Stage::Pvi => "pvi",
            Stage::Edd => "edd",
            Stage::Vlr => "vlr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("stage {stage}: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("stage {0} requires a positive PVI decision")]
    NotGated(Stage),
    #[error("no usable field of view (coverage {coverage:.4})")]
    NoFov { coverage: f64 },
    #[error("target {0} must be in [0, 1]")]
    InvalidTarget(f64),
    #[error("policy {0} requires a target")]
    MissingTarget(Policy),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("imaging: {0}")]
    Imaging(String),
}

impl StageError {
    pub(crate) fn backend(stage: Stage) -> impl FnOnce(BackendError) -> StageError {
        move |source| StageError::Backend { stage, source }
    }
}
