//! Session events and their newline-delimited JSON log format.
//!
//! Each line is `{"seq", "ts", "kind", "payload"}`; the payload schema is
//! fixed per kind.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::stages::{DiagnosisVector, LesionComponent, QualityVerdict, RecaptureDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Eye {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Eye::Left),
            "right" => Ok(Eye::Right),
            other => Err(format!("unknown eye `{other}` (expected left or right)")),
        }
    }
}

/// A stage either produced its output or failed with a coded reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageOutcome<T> {
    Ok(T),
    Failed { code: String, message: String },
}

impl<T> StageOutcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            StageOutcome::Ok(t) => Some(t),
            StageOutcome::Failed { .. } => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, StageOutcome::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub attempt: u32,
    pub asset: String,
    pub sha256: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviRecord {
    pub score: f64,
    pub threshold: f64,
    pub decision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub components: Vec<LesionComponent>,
    pub refined_pixels: usize,
    pub overlay_asset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferralReason {
    PviPositive,
    Ungradable,
    ManualReview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferralRecord {
    pub session_id: String,
    pub issued_at: DateTime<Utc>,
    pub reason: ReferralReason,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    CaptureSubmitted {
        eye: Eye,
        capture: CaptureRecord,
    },
    QualityAssessed {
        eye: Eye,
        verdict: QualityVerdict,
        decision: RecaptureDecision,
        elapsed_ms: f64,
    },
    RecapturePrompted {
        eye: Eye,
        attempt: u32,
        reasons: Vec<String>,
    },
    PviAssessed {
        eye: Eye,
        outcome: StageOutcome<PviRecord>,
        elapsed_ms: f64,
    },
    Diagnosed {
        eye: Eye,
        outcome: StageOutcome<DiagnosisVector>,
        elapsed_ms: f64,
    },
    LesionsVisualized {
        eye: Eye,
        outcome: StageOutcome<LesionRecord>,
        elapsed_ms: f64,
    },
    ReportGenerated {
        referral_recommended: bool,
        manual_review: bool,
    },
    ReferralIssued {
        referral: ReferralRecord,
    },
    Abandoned {
        eye: Eye,
        attempts: u32,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::CaptureSubmitted { .. } => "CaptureSubmitted",
            EventBody::QualityAssessed { .. } => "QualityAssessed",
            EventBody::RecapturePrompted { .. } => "RecapturePrompted",
            EventBody::PviAssessed { .. } => "PviAssessed",
            EventBody::Diagnosed { .. } => "Diagnosed",
            EventBody::LesionsVisualized { .. } => "LesionsVisualized",
            EventBody::ReportGenerated { .. } => "ReportGenerated",
            EventBody::ReferralIssued { .. } => "ReferralIssued",
            EventBody::Abandoned { .. } => "Abandoned",
        }
    }

    pub fn eye(&self) -> Option<Eye> {
        match self {
            EventBody::CaptureSubmitted { eye, .. }
            | EventBody::QualityAssessed { eye, .. }
            | EventBody::RecapturePrompted { eye, .. }
            | EventBody::PviAssessed { eye, .. }
            | EventBody::Diagnosed { eye, .. }
            | EventBody::LesionsVisualized { eye, .. }
            | EventBody::Abandoned { eye, .. } => Some(*eye),
            EventBody::ReportGenerated { .. } | EventBody::ReferralIssued { .. } => None,
        }
    }

    /// `(stage, elapsed)` for events that time a stage.
    pub fn timing(&self) -> Option<(&'static str, f64)> {
        match self {
            EventBody::QualityAssessed { elapsed_ms, .. } => Some(("quality", *elapsed_ms)),
            EventBody::PviAssessed { elapsed_ms, .. } => Some(("pvi", *elapsed_ms)),
            EventBody::Diagnosed { elapsed_ms, .. } => Some(("edd", *elapsed_ms)),
            EventBody::LesionsVisualized { elapsed_ms, .. } => Some(("vlr", *elapsed_ms)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl SessionEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

/// Parses a newline-delimited event log. Blank lines are skipped; any
/// other unparsable line is reported with the seq it should have had.
pub fn parse_event_log(text: &str) -> Result<Vec<SessionEvent>, PipelineError> {
    let mut events: Vec<SessionEvent> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let expected = events.len() as u64 + 1;
        let event: SessionEvent = serde_json::from_str(line).map_err(|e| PipelineError::CorruptLog {
            seq: expected,
            reason: format!("unparsable event: {e}"),
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_shape() {
        let e = SessionEvent {
            seq: 3,
            ts: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            body: EventBody::Abandoned {
                eye: Eye::Right,
                attempts: 3,
            },
        };
        let line = e.to_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["seq"], 3);
        assert_eq!(v["kind"], "Abandoned");
        assert_eq!(v["payload"]["eye"], "right");
        assert!(v["ts"].is_string());
        assert_eq!(parse_event_log(&line).unwrap(), vec![e]);
    }

    #[test]
    fn floats_survive_the_log() {
        let e = SessionEvent {
            seq: 1,
            ts: DateTime::from_timestamp(0, 123_456_789).unwrap(),
            body: EventBody::PviAssessed {
                eye: Eye::Left,
                outcome: StageOutcome::Ok(PviRecord {
                    score: 0.1 + 0.2,
                    threshold: 1.0 + f64::EPSILON,
                    decision: false,
                }),
                elapsed_ms: 1.0 / 3.0,
            },
        };
        assert_eq!(parse_event_log(&e.to_line()).unwrap(), vec![e]);
    }

    #[test]
    fn garbage_line_names_its_seq() {
        let good = SessionEvent {
            seq: 1,
            ts: DateTime::from_timestamp(0, 0).unwrap(),
            body: EventBody::ReportGenerated {
                referral_recommended: false,
                manual_review: false,
            },
        };
        let text = format!("{}\n{{\"seq\":2,\"kind\":\"Nope\"}}\n", good.to_line());
        assert!(matches!(parse_event_log(&text), Err(PipelineError::CorruptLog { seq: 2, .. })));
    }
}
