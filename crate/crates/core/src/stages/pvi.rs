use serde::{Deserialize, Serialize};

use super::{OperatingPoint, Stage, StageError};
use crate::backends::{classify, Backend, Task, PVI_LABEL};
use crate::grid::PixelGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviResult {
    pub score: f64,
    pub decision: bool,
    pub operating_point: OperatingPoint,
}

impl PviResult {
    /// Applies the `score >= threshold` rule.
    pub fn at(score: f64, operating_point: &OperatingPoint) -> Self {
        Self {
            score,
            decision: score >= operating_point.threshold,
            operating_point: operating_point.clone(),
        }
    }
}

pub fn detect_pvi(
    image: &PixelGrid,
    backend: &dyn Backend,
    operating_point: &OperatingPoint,
) -> Result<PviResult, StageError> {
    let scores = classify(backend, image, Task::Pvi).map_err(StageError::backend(Stage::Pvi))?;
    Ok(PviResult::at(scores.get(PVI_LABEL).expect("validated by classify"), operating_point))
}
