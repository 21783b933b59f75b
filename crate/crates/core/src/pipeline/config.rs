//! Pipeline configuration (JSON) and operating-point documents.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::events::Eye;
use super::PipelineError;
use crate::backends::{
    Backend, BackendDescriptor, BackendKind, Capability, ChannelProbeBackend, ExternalBackend, ReferenceBackend,
    ReferenceConfig, PROBE_MODEL_ID, REFERENCE_MODEL_ID,
};
use crate::stages::{DiagnosisConfig, OperatingPoint, QualityConfig, Stage, VlrConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub model_id: String,
    pub endpoint: Option<String>,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Reference,
            model_id: REFERENCE_MODEL_ID.to_string(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageBackends {
    pub quality: BackendSpec,
    pub pvi: BackendSpec,
    pub edd: BackendSpec,
    pub vlr: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Captures are resampled to this square size before any stage runs.
    pub working_resolution: usize,
    pub eyes: Vec<Eye>,
    pub quality: QualityConfig,
    pub diagnosis: DiagnosisConfig,
    pub vlr: VlrConfig,
    pub reference: ReferenceConfig,
    /// Relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operating_point_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<OperatingPoint>,
    pub backends: StageBackends,
    pub backend_timeout_ms: u64,
    pub referral_destination: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            working_resolution: 512,
            eyes: vec![Eye::Left],
            quality: QualityConfig::default(),
            diagnosis: DiagnosisConfig::default(),
            vlr: VlrConfig::default(),
            reference: ReferenceConfig::default(),
            operating_point_path: None,
            operating_point: None,
            backends: StageBackends::default(),
            backend_timeout_ms: 5000,
            referral_destination: "eye-care clinic".to_string(),
        }
    }
}

fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T, PipelineError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { what.to_string() } else { path };
        PipelineError::ConfigInvalid(format!("{path}: {}", e.inner()))
    })
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::ConfigInvalid(format!("{path}: {msg}"))
}

fn check_unit(path: &str, v: f64) -> Result<(), PipelineError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("{v} is outside [0, 1]")))
    }
}

/// Parses and validates an operating-point document.
pub fn parse_operating_point(text: &str) -> Result<OperatingPoint, PipelineError> {
    let op: OperatingPoint = parse_json(text, "operating_point")?;
    validate_operating_point(&op, "operating_point")?;
    Ok(op)
}

pub fn validate_operating_point(op: &OperatingPoint, path: &str) -> Result<(), PipelineError> {
    if !op.threshold.is_finite() {
        return Err(invalid(&format!("{path}.threshold"), "must be finite"));
    }
    check_unit(&format!("{path}.achieved_sensitivity"), op.achieved_sensitivity)?;
    check_unit(&format!("{path}.achieved_specificity"), op.achieved_specificity)?;
    if let Some(t) = op.target {
        check_unit(&format!("{path}.target"), t)?;
    }
    if op.calibration_set_id.is_empty() {
        return Err(invalid(&format!("{path}.calibration_set_id"), "must not be empty"));
    }
    Ok(())
}

pub fn load_operating_point(path: &Path) -> Result<OperatingPoint, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| invalid("operating_point_path", format!("{}: {e}", path.display())))?;
    parse_operating_point(&text)
}

impl PipelineConfig {
    /// Parses and validates without touching the filesystem.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = parse_json(text, "config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and loads its operating point, resolving a
    /// relative `operating_point_path` against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(op_path) = cfg.operating_point_path.clone() {
            let resolved = if op_path.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(op_path)
            } else {
                op_path
            };
            cfg.operating_point = Some(load_operating_point(&resolved)?);
            cfg.operating_point_path = Some(resolved);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(16..=8192).contains(&self.working_resolution) {
            return Err(invalid("working_resolution", "must be in [16, 8192]"));
        }
        if self.eyes.is_empty() {
            return Err(invalid("eyes", "must list at least one eye"));
        }
        if self.eyes.iter().collect::<BTreeSet<_>>().len() != self.eyes.len() {
            return Err(invalid("eyes", "must not repeat an eye"));
        }
        check_unit("quality.threshold", self.quality.threshold)?;
        if self.quality.max_attempts == 0 {
            return Err(invalid("quality.max_attempts", "must be at least 1"));
        }
        for (name, floor) in &self.quality.feature_floors {
            if !floor.is_finite() {
                return Err(invalid(&format!("quality.feature_floors.{name}"), "must be finite"));
            }
        }
        check_unit("diagnosis.default_threshold", self.diagnosis.default_threshold)?;
        for (label, t) in &self.diagnosis.thresholds {
            check_unit(&format!("diagnosis.thresholds.{}", label.as_str()), *t)?;
        }
        check_unit("vlr.binarize_threshold", self.vlr.binarize_threshold as f64)?;
        check_unit("vlr.fill_alpha", self.vlr.fill_alpha as f64)?;
        check_unit("vlr.min_area_fraction", self.vlr.min_area_fraction)?;
        if let Some(op) = &self.operating_point {
            validate_operating_point(op, "operating_point")?;
        }
        if self.backend_timeout_ms == 0 {
            return Err(invalid("backend_timeout_ms", "must be positive"));
        }
        for (stage, spec) in self.stage_specs() {
            let path = format!("backends.{stage}");
            match spec.kind {
                BackendKind::Reference if spec.model_id != REFERENCE_MODEL_ID && spec.model_id != PROBE_MODEL_ID => {
                    return Err(invalid(
                        &format!("{path}.model_id"),
                        format!("unknown in-process model `{}`", spec.model_id),
                    ))
                }
                BackendKind::External if spec.endpoint.as_deref().map_or(true, str::is_empty) => {
                    return Err(invalid(&format!("{path}.endpoint"), "required for external backends"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn stage_specs(&self) -> [(Stage, &BackendSpec); 4] {
        [
            (Stage::Quality, &self.backends.quality),
            (Stage::Pvi, &self.backends.pvi),
            (Stage::Edd, &self.backends.edd),
            (Stage::Vlr, &self.backends.vlr),
        ]
    }

    /// The operating point, or an error naming where it should come from.
    pub fn require_operating_point(&self) -> Result<&OperatingPoint, PipelineError> {
        self.operating_point
            .as_ref()
            .ok_or_else(|| invalid("operating_point_path", "no operating point configured"))
    }

    fn build_backend(&self, stage: Stage, spec: &BackendSpec) -> Result<Arc<dyn Backend>, PipelineError> {
        match (spec.kind, spec.model_id.as_str()) {
            (BackendKind::Reference, PROBE_MODEL_ID) => Ok(Arc::new(ChannelProbeBackend::default())),
            (BackendKind::Reference, _) => Ok(Arc::new(ReferenceBackend::new(self.reference))),
            (BackendKind::External, _) => {
                let capability = match stage {
                    Stage::Quality => Capability::ClassifyQuality,
                    Stage::Pvi => Capability::ClassifyPvi,
                    Stage::Edd => Capability::ClassifyEdd,
                    Stage::Vlr => Capability::Segment,
                };
                let descriptor = BackendDescriptor {
                    kind: BackendKind::External,
                    model_id: spec.model_id.clone(),
                    capabilities: [capability].into_iter().collect(),
                    endpoint: spec.endpoint.clone(),
                };
                let backend = ExternalBackend::new(descriptor)
                    .map_err(|e| invalid(&format!("backends.{stage}"), e))?
                    .with_timeout(Duration::from_millis(self.backend_timeout_ms));
                Ok(Arc::new(backend))
            }
        }
    }

    pub fn build_backends(&self) -> Result<Backends, PipelineError> {
        Ok(Backends {
            quality: self.build_backend(Stage::Quality, &self.backends.quality)?,
            pvi: self.build_backend(Stage::Pvi, &self.backends.pvi)?,
            edd: self.build_backend(Stage::Edd, &self.backends.edd)?,
            vlr: self.build_backend(Stage::Vlr, &self.backends.vlr)?,
        })
    }
}

/// One backend per stage.
#[derive(Clone)]
pub struct Backends {
    pub quality: Arc<dyn Backend>,
    pub pvi: Arc<dyn Backend>,
    pub edd: Arc<dyn Backend>,
    pub vlr: Arc<dyn Backend>,
}

impl Backends {
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self {
            quality: backend.clone(),
            pvi: backend.clone(),
            edd: backend.clone(),
            vlr: backend,
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("quality", &self.quality.descriptor().model_id)
            .field("pvi", &self.pvi.descriptor().model_id)
            .field("edd", &self.edd.descriptor().model_id)
            .field("vlr", &self.vlr.descriptor().model_id)
            .finish()
    }
}
