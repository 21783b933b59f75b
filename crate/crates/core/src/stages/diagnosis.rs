use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{PviResult, Stage, StageError};
use crate::backends::{classify, Backend, DiseaseLabel, Task};
use crate::grid::PixelGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    pub default_threshold: f64,
    /// Per-label overrides of `default_threshold`.
    pub thresholds: BTreeMap<DiseaseLabel, f64>,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            default_threshold: 0.5,
            thresholds: BTreeMap::new(),
        }
    }
}

impl DiagnosisConfig {
    pub fn threshold(&self, label: DiseaseLabel) -> f64 {
        self.thresholds.get(&label).copied().unwrap_or(self.default_threshold)
    }
}

/// Multi-label output; `positives` may be empty or hold several labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisVector {
    pub probs: BTreeMap<DiseaseLabel, f64>,
    pub positives: BTreeSet<DiseaseLabel>,
    pub per_label_thresholds: BTreeMap<DiseaseLabel, f64>,
}

impl DiagnosisVector {
    pub fn from_probs(probs: BTreeMap<DiseaseLabel, f64>, cfg: &DiagnosisConfig) -> Self {
        let per_label_thresholds: BTreeMap<_, _> = DiseaseLabel::ALL.iter().map(|&l| (l, cfg.threshold(l))).collect();
        let positives = probs
            .iter()
            .filter(|(l, p)| **p >= per_label_thresholds[*l])
            .map(|(l, _)| *l)
            .collect();
        Self {
            probs,
            positives,
            per_label_thresholds,
        }
    }

    /// Operator-facing summary line.
    pub fn summary(&self) -> String {
        if self.positives.is_empty() {
            let others = self.probs.get(&DiseaseLabel::Others).copied().unwrap_or(0.0);
            format!("no specific category; see Others score ({others:.3})")
        } else {
            self.positives.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
        }
    }
}

/// Requires a positive PVI result; the gate is checked here as well as by
/// the pipeline.
pub fn diagnose(
    image: &PixelGrid,
    backend: &dyn Backend,
    cfg: &DiagnosisConfig,
    pvi: Option<&PviResult>,
) -> Result<DiagnosisVector, StageError> {
    if !pvi.is_some_and(|p| p.decision) {
        return Err(StageError::NotGated(Stage::Edd));
    }
    let scores = classify(backend, image, Task::Edd).map_err(StageError::backend(Stage::Edd))?;
    let probs = DiseaseLabel::ALL
        .iter()
        .map(|&l| (l, scores.get(l.as_str()).expect("validated by classify")))
        .collect();
    Ok(DiagnosisVector::from_probs(probs, cfg))
}
