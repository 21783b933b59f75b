//! Screening sessions end to end: capture intake with the quality gate,
//! gated screening stages, reports and referrals. Every state change is an
//! event appended to the session's log before it takes effect in memory.

mod clock;
mod config;
mod events;
mod report;
mod session;
mod store;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use clock::{Clock, StepClock, SystemClock};
pub use config::{
    load_operating_point, parse_operating_point, validate_operating_point, BackendSpec, Backends, PipelineConfig,
    StageBackends,
};
pub use events::{
    parse_event_log, CaptureRecord, EventBody, Eye, LesionRecord, PviRecord, ReferralReason, ReferralRecord,
    SessionEvent, StageOutcome,
};
pub use report::{primary_reason, referral_letter, round6, EyeReport, PviSummary, ReportOutcome, ScreeningReport, DISCLAIMER};
pub use session::{replay, EyeSlot, EyeStatus, ReportFlags, ScreeningSession, SessionHeader, SessionState};
pub use store::{is_safe_name, FileStore, IndexEntry, MemoryStore, SessionIndex, SessionStore};

use crate::grid::PixelGrid;
use crate::imaging::{decode_any, encode_mask_png, encode_png, resize};
use crate::stages::{
    assess_quality, detect_pvi, diagnose, recapture_decision, visualize_lesions, OperatingPoint, PviResult,
    QualityVerdict, RecaptureDecision, Stage, StageError,
};

pub const REPORT_ASSET: &str = "report.json";
pub const REFERRAL_LETTER_ASSET: &str = "referral-letter.txt";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("session id `{0}` already exists")]
    IdCollision(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("asset `{0}` not found")]
    AssetNotFound(String),
    #[error("cannot {operation} in state {state}")]
    WrongState { state: SessionState, operation: &'static str },
    #[error("eye `{0}` is not configured for this session")]
    EyeNotConfigured(Eye),
    #[error("eye `{0}` already has a quality outcome")]
    EyeAlreadyResolved(Eye),
    #[error("expected a recapture of the {expected} eye")]
    WrongEye { expected: Eye },
    #[error("cannot decode capture: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("session is not eligible for referral")]
    NotEligible,
    #[error("session has already been referred")]
    AlreadyReferred,
    #[error("report not ready (session is {0})")]
    ReportNotReady(SessionState),
    #[error("corrupt event log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("store: {0}")]
    Store(String),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::ConfigInvalid(_) => "config-invalid",
            PipelineError::IdCollision(_) => "id-collision",
            PipelineError::UnknownSession(_) => "unknown-session",
            PipelineError::AssetNotFound(_) => "asset-not-found",
            PipelineError::WrongState { .. } => "wrong-state",
            PipelineError::EyeNotConfigured(_) => "eye-not-configured",
            PipelineError::EyeAlreadyResolved(_) => "eye-already-resolved",
            PipelineError::WrongEye { .. } => "wrong-eye",
            PipelineError::Decode(_) => "decode-error",
            PipelineError::InvalidRequest(_) => "invalid-request",
            PipelineError::NotEligible => "not-eligible",
            PipelineError::AlreadyReferred => "already-referred",
            PipelineError::ReportNotReady(_) => "report-not-ready",
            PipelineError::CorruptLog { .. } => "corrupt-log",
            PipelineError::Store(_) => "store-error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NextAction {
    PromptRecapture,
    EyeAccepted,
    SessionReadyToScreen,
    SessionUngradable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureOutcome {
    pub action: NextAction,
    pub eye: Eye,
    pub verdict: QualityVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_eye: Option<Eye>,
}

fn stage_error_code(e: &StageError) -> String {
    match e {
        StageError::Backend { source, .. } => source.code().to_string(),
        StageError::NoFov { .. } => "no-fov".into(),
        StageError::NotGated(_) => "not-gated".into(),
        StageError::Imaging(_) => "imaging".into(),
        _ => "internal".into(),
    }
}

fn failed<T>(e: &StageError) -> StageOutcome<T> {
    StageOutcome::Failed {
        code: stage_error_code(e),
        message: e.to_string(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn capture_extension(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Jpeg) => "jpg",
        _ => "png",
    }
}

type SessionCell = Arc<Mutex<ScreeningSession>>;

pub struct Pipeline {
    config: PipelineConfig,
    operating_point: OperatingPoint,
    backends: Backends,
    store: Arc<dyn SessionStore>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, SessionCell>>,
}

impl Pipeline {
    /// Builds backends from the config and uses the system clock.
    pub fn new(config: PipelineConfig, store: Arc<dyn SessionStore>) -> Result<Self, PipelineError> {
        let backends = config.build_backends()?;
        let op = config.require_operating_point()?.clone();
        Self::with_parts(config, op, backends, store, Arc::new(SystemClock::new()))
    }

    pub fn with_parts(
        config: PipelineConfig,
        operating_point: OperatingPoint,
        backends: Backends,
        store: Arc<dyn SessionStore>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        validate_operating_point(&operating_point, "operating_point")?;
        Ok(Self {
            config,
            operating_point,
            backends,
            store,
            clock,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.operating_point
    }

    pub fn store(&self) -> &Arc<dyn SessionStore> {
        &self.store
    }

    pub fn create_session(&self, patient_ref: &str) -> Result<ScreeningSession, PipelineError> {
        self.create_session_with_id(&uuid::Uuid::new_v4().to_string(), patient_ref)
    }

    pub fn create_session_with_id(&self, id: &str, patient_ref: &str) -> Result<ScreeningSession, PipelineError> {
        if !is_safe_name(id) {
            return Err(PipelineError::InvalidRequest(format!("session id `{id}` is not a safe name")));
        }
        let patient_ref = patient_ref.trim();
        if patient_ref.is_empty() || patient_ref.len() > 256 || patient_ref.chars().any(char::is_control) {
            return Err(PipelineError::InvalidRequest(
                "patient_ref must be 1-256 printable characters".into(),
            ));
        }
        let header = SessionHeader {
            session_id: id.to_string(),
            patient_ref: patient_ref.to_string(),
            created_at: self.clock.now(),
            eyes: self.config.eyes.clone(),
            quality: self.config.quality.clone(),
            operating_point: self.operating_point.clone(),
        };
        let session = ScreeningSession::new(header)?;
        let mut cache = self.sessions.lock().expect("session cache");
        if cache.contains_key(id) {
            return Err(PipelineError::IdCollision(id.to_string()));
        }
        self.store.create(&session.header)?;
        cache.insert(id.to_string(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn cell(&self, id: &str) -> Result<SessionCell, PipelineError> {
        let mut cache = self.sessions.lock().expect("session cache");
        if let Some(cell) = cache.get(id) {
            return Ok(cell.clone());
        }
        let (header, events) = self.store.load(id)?;
        let session = replay(header, events)?;
        let cell = Arc::new(Mutex::new(session));
        cache.insert(id.to_string(), cell.clone());
        Ok(cell)
    }

    /// Snapshot of a session's current state.
    pub fn session(&self, id: &str) -> Result<ScreeningSession, PipelineError> {
        Ok(self.cell(id)?.lock().expect("session lock").clone())
    }

    pub fn list_sessions(&self) -> Result<Vec<String>, PipelineError> {
        self.store.list()
    }

    pub fn asset(&self, id: &str, name: &str) -> Result<Vec<u8>, PipelineError> {
        self.cell(id)?;
        self.store.get_asset(id, name)
    }

    /// Validates the event against the state machine, persists it, then
    /// applies it in memory.
    fn commit(&self, session: &mut ScreeningSession, body: EventBody) -> Result<(), PipelineError> {
        let event = SessionEvent {
            seq: session.next_seq(),
            ts: self.clock.now(),
            body,
        };
        let mut next = session.clone();
        next.apply(event.clone())?;
        self.store.append(session.id(), &event)?;
        *session = next;
        Ok(())
    }

    fn working(&self, image: &PixelGrid) -> PixelGrid {
        let r = self.config.working_resolution;
        resize(image, r, r)
    }

    pub fn submit_capture(&self, id: &str, eye: Eye, bytes: &[u8]) -> Result<CaptureOutcome, PipelineError> {
        let cell = self.cell(id)?;
        let mut s = cell.lock().expect("session lock");
        if s.state != SessionState::AwaitingCapture {
            return Err(PipelineError::WrongState {
                state: s.state,
                operation: "submit a capture",
            });
        }
        let slot = s.slot(eye).ok_or(PipelineError::EyeNotConfigured(eye))?;
        if slot.status != EyeStatus::Pending {
            return Err(PipelineError::EyeAlreadyResolved(eye));
        }
        if let Some(expected) = s.next_eye().filter(|e| *e != eye && !s.slot(*e).expect("eye").captures.is_empty()) {
            return Err(PipelineError::WrongEye { expected });
        }
        let original = decode_any(bytes).map_err(|e| PipelineError::Decode(e.to_string()))?;
        let attempt = slot.captures.len() as u32 + 1;
        let asset = format!("capture-{eye}-{attempt}.{}", capture_extension(bytes));
        self.store.put_asset(id, &asset, bytes)?;
        let capture = CaptureRecord {
            attempt,
            asset,
            sha256: sha256_hex(bytes),
            width: original.width(),
            height: original.height(),
        };
        self.commit(&mut s, EventBody::CaptureSubmitted { eye, capture })?;

        let working = self.working(&original);
        let started = self.clock.monotonic_ms();
        let verdict = match assess_quality(&working, self.backends.quality.as_ref(), &s.header.quality, attempt) {
            Ok(v) => v,
            Err(e) => QualityVerdict {
                gradable: false,
                score: 0.0,
                reasons: vec![format!("quality-stage-failed: {}", stage_error_code(&e))],
                attempt,
                details: Default::default(),
            },
        };
        let elapsed_ms = (self.clock.monotonic_ms() - started).max(0.0);
        let decision = recapture_decision(&verdict, &s.header.quality);
        self.commit(
            &mut s,
            EventBody::QualityAssessed {
                eye,
                verdict: verdict.clone(),
                decision,
                elapsed_ms,
            },
        )?;
        let action = match decision {
            RecaptureDecision::PromptRecapture => {
                self.commit(
                    &mut s,
                    EventBody::RecapturePrompted {
                        eye,
                        attempt: attempt + 1,
                        reasons: verdict.reasons.clone(),
                    },
                )?;
                NextAction::PromptRecapture
            }
            RecaptureDecision::AbandonUngradable => {
                self.commit(&mut s, EventBody::Abandoned { eye, attempts: attempt })?;
                self.finish(&mut s)?;
                NextAction::SessionUngradable
            }
            RecaptureDecision::Proceed if s.state == SessionState::Screening => NextAction::SessionReadyToScreen,
            RecaptureDecision::Proceed => NextAction::EyeAccepted,
        };
        Ok(CaptureOutcome {
            action,
            eye,
            verdict,
            next_eye: s.next_eye(),
        })
    }

    fn load_capture(&self, s: &ScreeningSession, eye: Eye) -> Result<PixelGrid, StageError> {
        let capture = s
            .slot(eye)
            .and_then(EyeSlot::accepted_capture)
            .ok_or_else(|| StageError::Imaging(format!("no accepted capture for {eye} eye")))?;
        let bytes = self
            .store
            .get_asset(s.id(), &capture.asset)
            .map_err(|e| StageError::Imaging(e.to_string()))?;
        decode_any(&bytes).map_err(|e| StageError::Imaging(e.to_string()))
    }

    fn pvi_result(&self, s: &ScreeningSession, eye: Eye) -> Option<PviResult> {
        let record = s.slot(eye)?.pvi.as_ref()?.ok()?;
        Some(PviResult {
            score: record.score,
            decision: record.decision,
            operating_point: s.header.operating_point.clone(),
        })
    }

    /// Runs every outstanding screening stage, then generates the report.
    /// Resumes where a previous interrupted run stopped.
    pub fn run_screening(&self, id: &str) -> Result<ScreeningReport, PipelineError> {
        let cell = self.cell(id)?;
        let mut s = cell.lock().expect("session lock");
        if s.state != SessionState::Screening {
            return Err(PipelineError::WrongState {
                state: s.state,
                operation: "run screening",
            });
        }
        let mut images: HashMap<Eye, Result<(PixelGrid, PixelGrid), StageError>> = HashMap::new();
        while let Some((eye, stage)) = s.next_screening_step() {
            let loaded = images
                .entry(eye)
                .or_insert_with(|| self.load_capture(&s, eye).map(|o| (self.working(&o), o)))
                .clone();
            let pvi = self.pvi_result(&s, eye);
            let started = self.clock.monotonic_ms();
            let body = match stage {
                Stage::Pvi => {
                    let outcome = match loaded.and_then(|(w, _)| {
                        detect_pvi(&w, self.backends.pvi.as_ref(), &s.header.operating_point)
                    }) {
                        Ok(p) => StageOutcome::Ok(PviRecord {
                            score: p.score,
                            threshold: p.operating_point.threshold,
                            decision: p.decision,
                        }),
                        Err(e) => failed(&e),
                    };
                    let elapsed_ms = (self.clock.monotonic_ms() - started).max(0.0);
                    EventBody::PviAssessed { eye, outcome, elapsed_ms }
                }
                Stage::Edd => {
                    let outcome = match loaded.and_then(|(w, _)| {
                        diagnose(&w, self.backends.edd.as_ref(), &self.config.diagnosis, pvi.as_ref())
                    }) {
                        Ok(d) => StageOutcome::Ok(d),
                        Err(e) => failed(&e),
                    };
                    let elapsed_ms = (self.clock.monotonic_ms() - started).max(0.0);
                    EventBody::Diagnosed { eye, outcome, elapsed_ms }
                }
                Stage::Vlr | Stage::Quality => {
                    let result = loaded.and_then(|(w, o)| {
                        visualize_lesions(&w, &o, self.backends.vlr.as_ref(), &self.config.vlr, pvi.as_ref())
                    });
                    let elapsed_ms = (self.clock.monotonic_ms() - started).max(0.0);
                    let outcome = match result {
                        Ok(v) => {
                            let overlay_asset = format!("overlay-{eye}.png");
                            let png = encode_png(&v.overlay).map_err(|e| PipelineError::Store(e.to_string()))?;
                            self.store.put_asset(id, &overlay_asset, &png)?;
                            let mask = encode_mask_png(&v.refined).map_err(|e| PipelineError::Store(e.to_string()))?;
                            self.store.put_asset(id, &format!("mask-{eye}.png"), &mask)?;
                            StageOutcome::Ok(LesionRecord {
                                refined_pixels: v.refined.count(),
                                components: v.components,
                                overlay_asset,
                            })
                        }
                        Err(e) => failed(&e),
                    };
                    EventBody::LesionsVisualized { eye, outcome, elapsed_ms }
                }
            };
            self.commit(&mut s, body)?;
        }
        self.finish(&mut s)
    }

    fn finish(&self, s: &mut ScreeningSession) -> Result<ScreeningReport, PipelineError> {
        let (referral_recommended, manual_review) = s.derived_flags();
        self.commit(
            s,
            EventBody::ReportGenerated {
                referral_recommended,
                manual_review,
            },
        )?;
        let report = ScreeningReport::from_session(s).expect("report event recorded");
        self.store.put_asset(s.id(), REPORT_ASSET, report.to_json().as_bytes())?;
        Ok(report)
    }

    pub fn report(&self, id: &str) -> Result<ScreeningReport, PipelineError> {
        let cell = self.cell(id)?;
        let s = cell.lock().expect("session lock");
        ScreeningReport::from_session(&s).ok_or(PipelineError::ReportNotReady(s.state))
    }

    /// Issues a referral for a completed session that recommends one.
    /// `destination` defaults to the configured referral destination.
    pub fn issue_referral(&self, id: &str, destination: Option<&str>) -> Result<ReferralRecord, PipelineError> {
        let cell = self.cell(id)?;
        let mut s = cell.lock().expect("session lock");
        match s.state {
            SessionState::Referred => return Err(PipelineError::AlreadyReferred),
            SessionState::Completed | SessionState::CompletedUngradable => {}
            state => {
                return Err(PipelineError::WrongState {
                    state,
                    operation: "issue a referral",
                })
            }
        }
        let report = ScreeningReport::from_session(&s).ok_or(PipelineError::ReportNotReady(s.state))?;
        if !report.referral_recommended {
            return Err(PipelineError::NotEligible);
        }
        let destination = destination
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .unwrap_or(&self.config.referral_destination)
            .to_string();
        let referral = ReferralRecord {
            session_id: s.id().to_string(),
            issued_at: self.clock.now(),
            reason: primary_reason(&report),
            destination,
        };
        self.commit(&mut s, EventBody::ReferralIssued { referral: referral.clone() })?;
        self.store
            .put_asset(s.id(), REFERRAL_LETTER_ASSET, referral_letter(&report, &referral).as_bytes())?;
        Ok(referral)
    }
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("backends", &self.backends)
            .field("operating_point", &self.operating_point)
            .finish_non_exhaustive()
    }
}
