//! The session state machine. A session is a header plus an append-only
//! event log; every field here is derived by folding events through
//! [`ScreeningSession::apply`], which rejects any event the state machine
//! would not have produced.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::events::{CaptureRecord, EventBody, Eye, LesionRecord, PviRecord, ReferralRecord, SessionEvent, StageOutcome};
use super::PipelineError;
use crate::stages::{recapture_decision, DiagnosisVector, OperatingPoint, QualityConfig, QualityVerdict, RecaptureDecision, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    AwaitingCapture,
    QualityReview,
    Screening,
    Completed,
    Referred,
    CompletedUngradable,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::AwaitingCapture => "awaiting-capture",
            SessionState::QualityReview => "quality-review",
            SessionState::Screening => "screening",
            SessionState::Completed => "completed",
            SessionState::Referred => "referred",
            SessionState::CompletedUngradable => "completed-ungradable",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SessionState::Completed | SessionState::Referred | SessionState::CompletedUngradable
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything fixed at session creation. Stored beside the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub patient_ref: String,
    pub created_at: DateTime<Utc>,
    pub eyes: Vec<Eye>,
    pub quality: QualityConfig,
    pub operating_point: OperatingPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EyeStatus {
    Pending,
    Accepted,
    Ungradable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeSlot {
    pub status: EyeStatus,
    pub captures: Vec<CaptureRecord>,
    pub verdicts: Vec<QualityVerdict>,
    pub pvi: Option<StageOutcome<PviRecord>>,
    pub diagnosis: Option<StageOutcome<DiagnosisVector>>,
    pub lesions: Option<StageOutcome<LesionRecord>>,
}

impl EyeSlot {
    fn new() -> Self {
        Self {
            status: EyeStatus::Pending,
            captures: Vec::new(),
            verdicts: Vec::new(),
            pvi: None,
            diagnosis: None,
            lesions: None,
        }
    }

    pub fn accepted_capture(&self) -> Option<&CaptureRecord> {
        (self.status == EyeStatus::Accepted).then(|| self.captures.last()).flatten()
    }

    pub fn pvi_positive(&self) -> bool {
        matches!(&self.pvi, Some(StageOutcome::Ok(p)) if p.decision)
    }

    pub fn any_stage_failed(&self) -> bool {
        self.pvi.as_ref().is_some_and(StageOutcome::is_failed)
            || self.diagnosis.as_ref().is_some_and(StageOutcome::is_failed)
            || self.lesions.as_ref().is_some_and(StageOutcome::is_failed)
    }

    /// The next screening stage this eye still needs, if any.
    pub fn next_stage(&self) -> Option<Stage> {
        if self.status != EyeStatus::Accepted {
            return None;
        }
        if self.pvi.is_none() {
            Some(Stage::Pvi)
        } else if !self.pvi_positive() {
            None
        } else if self.diagnosis.is_none() {
            Some(Stage::Edd)
        } else if self.lesions.is_none() {
            Some(Stage::Vlr)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Awaiting {
    Quality(Eye),
    Recapture(Eye),
    Abandon(Eye),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub referral_recommended: bool,
    pub manual_review: bool,
    pub generated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningSession {
    pub header: SessionHeader,
    pub state: SessionState,
    pub eyes: BTreeMap<Eye, EyeSlot>,
    pub events: Vec<SessionEvent>,
    /// Total elapsed milliseconds per stage name.
    pub timings: BTreeMap<String, f64>,
    pub report: Option<ReportFlags>,
    pub referral: Option<ReferralRecord>,
    awaiting: Option<Awaiting>,
}

fn corrupt(seq: u64, reason: impl Into<String>) -> PipelineError {
    PipelineError::CorruptLog {
        seq,
        reason: reason.into(),
    }
}

impl ScreeningSession {
    pub fn new(header: SessionHeader) -> Result<Self, PipelineError> {
        if header.eyes.is_empty() {
            return Err(PipelineError::ConfigInvalid("session needs at least one eye".into()));
        }
        let mut eyes = BTreeMap::new();
        for eye in &header.eyes {
            if eyes.insert(*eye, EyeSlot::new()).is_some() {
                return Err(PipelineError::ConfigInvalid(format!("eye `{eye}` listed twice")));
            }
        }
        if header.quality.max_attempts == 0 {
            return Err(PipelineError::ConfigInvalid("quality.max_attempts must be at least 1".into()));
        }
        Ok(Self {
            header,
            state: SessionState::AwaitingCapture,
            eyes,
            events: Vec::new(),
            timings: BTreeMap::new(),
            report: None,
            referral: None,
            awaiting: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.header.session_id
    }

    pub fn slot(&self, eye: Eye) -> Option<&EyeSlot> {
        self.eyes.get(&eye)
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    /// The eye currently expecting a capture, in configured order.
    pub fn next_eye(&self) -> Option<Eye> {
        if self.state != SessionState::AwaitingCapture {
            return None;
        }
        if let Some(Awaiting::Recapture(eye)) = self.awaiting {
            return Some(eye);
        }
        self.header
            .eyes
            .iter()
            .copied()
            .find(|e| self.eyes[e].status == EyeStatus::Pending)
    }

    /// The next `(eye, stage)` screening still has to run.
    pub fn next_screening_step(&self) -> Option<(Eye, Stage)> {
        if self.state != SessionState::Screening {
            return None;
        }
        self.header
            .eyes
            .iter()
            .find_map(|e| self.eyes[e].next_stage().map(|s| (*e, s)))
    }

    /// Referral and manual-review flags implied by the current state.
    /// Any stage failure forces both: a screen that did not run is not a
    /// negative screen.
    pub fn derived_flags(&self) -> (bool, bool) {
        let manual_review = self.eyes.values().any(EyeSlot::any_stage_failed);
        let ungradable = self.eyes.values().any(|s| s.status == EyeStatus::Ungradable);
        let positive = self.eyes.values().any(EyeSlot::pvi_positive);
        (positive || ungradable || manual_review, manual_review)
    }

    fn all_screened(&self) -> bool {
        self.eyes.values().all(|s| s.status == EyeStatus::Accepted && s.next_stage().is_none())
    }

    fn screening_slot(&mut self, seq: u64, eye: Eye) -> Result<&mut EyeSlot, PipelineError> {
        if self.state != SessionState::Screening {
            return Err(corrupt(seq, format!("screening event in state {}", self.state)));
        }
        let slot = self
            .eyes
            .get_mut(&eye)
            .ok_or_else(|| corrupt(seq, format!("eye {eye} not in session")))?;
        if slot.status != EyeStatus::Accepted {
            return Err(corrupt(seq, format!("eye {eye} was not accepted")));
        }
        Ok(slot)
    }

    /// Folds one event into the session, validating the transition.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), PipelineError> {
        let seq = event.seq;
        if seq != self.next_seq() {
            return Err(corrupt(
                self.next_seq(),
                format!("expected seq {}, found {seq}", self.next_seq()),
            ));
        }
        if event.body.timing().is_some_and(|(_, ms)| !ms.is_finite() || ms < 0.0) {
            return Err(corrupt(seq, "stage timing must be finite and non-negative"));
        }
        match &event.body {
            EventBody::CaptureSubmitted { eye, capture } => {
                if self.state != SessionState::AwaitingCapture {
                    return Err(corrupt(seq, format!("capture in state {}", self.state)));
                }
                if matches!(self.awaiting, Some(Awaiting::Recapture(e)) if e != *eye) {
                    return Err(corrupt(seq, "capture for the wrong eye during recapture"));
                }
                let max = self.header.quality.max_attempts;
                let slot = self
                    .eyes
                    .get_mut(eye)
                    .ok_or_else(|| corrupt(seq, format!("eye {eye} not in session")))?;
                if slot.status != EyeStatus::Pending {
                    return Err(corrupt(seq, format!("eye {eye} already resolved")));
                }
                let attempt = slot.captures.len() as u32 + 1;
                if capture.attempt != attempt || attempt > max {
                    return Err(corrupt(seq, format!("capture attempt {} out of order", capture.attempt)));
                }
                slot.captures.push(capture.clone());
                self.state = SessionState::QualityReview;
                self.awaiting = Some(Awaiting::Quality(*eye));
            }
            EventBody::QualityAssessed {
                eye, verdict, decision, ..
            } => {
                if self.awaiting != Some(Awaiting::Quality(*eye)) {
                    return Err(corrupt(seq, "quality verdict without a pending capture"));
                }
                let slot = self.eyes.get_mut(eye).expect("awaiting eye exists");
                if verdict.attempt as usize != slot.captures.len() {
                    return Err(corrupt(seq, "verdict attempt does not match capture"));
                }
                if *decision != recapture_decision(verdict, &self.header.quality) {
                    return Err(corrupt(seq, "recapture decision inconsistent with verdict"));
                }
                slot.verdicts.push(verdict.clone());
                match decision {
                    RecaptureDecision::Proceed => {
                        slot.status = EyeStatus::Accepted;
                        self.awaiting = None;
                        self.state = if self.eyes.values().all(|s| s.status == EyeStatus::Accepted) {
                            SessionState::Screening
                        } else {
                            SessionState::AwaitingCapture
                        };
                    }
                    RecaptureDecision::PromptRecapture => self.awaiting = Some(Awaiting::Recapture(*eye)),
                    RecaptureDecision::AbandonUngradable => self.awaiting = Some(Awaiting::Abandon(*eye)),
                }
            }
            EventBody::RecapturePrompted { eye, attempt, .. } => {
                if self.awaiting != Some(Awaiting::Recapture(*eye)) || self.state != SessionState::QualityReview {
                    return Err(corrupt(seq, "recapture prompt without a failed verdict"));
                }
                if *attempt as usize != self.eyes[eye].captures.len() + 1 {
                    return Err(corrupt(seq, "recapture prompt names the wrong attempt"));
                }
                self.state = SessionState::AwaitingCapture;
            }
            EventBody::Abandoned { eye, attempts } => {
                if self.awaiting != Some(Awaiting::Abandon(*eye)) {
                    return Err(corrupt(seq, "abandon without exhausted attempts"));
                }
                let slot = self.eyes.get_mut(eye).expect("awaiting eye exists");
                if *attempts as usize != slot.captures.len() {
                    return Err(corrupt(seq, "abandon attempt count mismatch"));
                }
                slot.status = EyeStatus::Ungradable;
                self.awaiting = None;
                self.state = SessionState::CompletedUngradable;
            }
            EventBody::PviAssessed { eye, outcome, .. } => {
                let threshold = self.header.operating_point.threshold;
                let slot = self.screening_slot(seq, *eye)?;
                if slot.pvi.is_some() {
                    return Err(corrupt(seq, "PVI assessed twice"));
                }
                if let StageOutcome::Ok(p) = outcome {
                    if p.threshold.to_bits() != threshold.to_bits() || p.decision != (p.score >= p.threshold) {
                        return Err(corrupt(seq, "PVI decision inconsistent with operating point"));
                    }
                }
                slot.pvi = Some(outcome.clone());
            }
            EventBody::Diagnosed { eye, outcome, .. } => {
                let slot = self.screening_slot(seq, *eye)?;
                if !slot.pvi_positive() {
                    return Err(corrupt(seq, "diagnosis without a positive PVI decision"));
                }
                if slot.diagnosis.is_some() {
                    return Err(corrupt(seq, "diagnosed twice"));
                }
                slot.diagnosis = Some(outcome.clone());
            }
            EventBody::LesionsVisualized { eye, outcome, .. } => {
                let slot = self.screening_slot(seq, *eye)?;
                if !slot.pvi_positive() || slot.diagnosis.is_none() {
                    return Err(corrupt(seq, "lesion visualization out of order"));
                }
                if slot.lesions.is_some() {
                    return Err(corrupt(seq, "lesions visualized twice"));
                }
                slot.lesions = Some(outcome.clone());
            }
            EventBody::ReportGenerated {
                referral_recommended,
                manual_review,
            } => {
                let ready = match self.state {
                    SessionState::Screening => self.all_screened(),
                    SessionState::CompletedUngradable => true,
                    _ => false,
                };
                if !ready || self.report.is_some() {
                    return Err(corrupt(seq, format!("report in state {}", self.state)));
                }
                if (*referral_recommended, *manual_review) != self.derived_flags() {
                    return Err(corrupt(seq, "report flags inconsistent with stage outcomes"));
                }
                self.report = Some(ReportFlags {
                    referral_recommended: *referral_recommended,
                    manual_review: *manual_review,
                    generated_at: event.ts,
                });
                if self.state == SessionState::Screening {
                    self.state = SessionState::Completed;
                }
            }
            EventBody::ReferralIssued { referral } => {
                let eligible = matches!(self.state, SessionState::Completed | SessionState::CompletedUngradable)
                    && self.report.is_some_and(|r| r.referral_recommended);
                if !eligible || self.referral.is_some() || referral.session_id != self.header.session_id {
                    return Err(corrupt(seq, format!("referral in state {}", self.state)));
                }
                self.referral = Some(referral.clone());
                self.state = SessionState::Referred;
            }
        }
        if let Some((stage, ms)) = event.body.timing() {
            *self.timings.entry(stage.to_string()).or_insert(0.0) += ms;
        }
        self.events.push(event);
        Ok(())
    }
}

/// Rebuilds a session from its header and event log.
pub fn replay(header: SessionHeader, events: impl IntoIterator<Item = SessionEvent>) -> Result<ScreeningSession, PipelineError> {
    let mut session = ScreeningSession::new(header)?;
    for event in events {
        session.apply(event)?;
    }
    Ok(session)
}
