//! Screening reports and referral letters, both derived from session state.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::events::{Eye, LesionRecord, ReferralReason, ReferralRecord, StageOutcome};
use super::session::{EyeStatus, ScreeningSession};
use crate::stages::{DiagnosisVector, OperatingPoint, QualityVerdict};

pub const DISCLAIMER: &str =
    "Screening aid only. A negative screen does not rule out eye disease; a positive screen requires clinical examination.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportOutcome {
    Screened,
    Ungradable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviSummary {
    /// Rounded to six decimals.
    pub score: f64,
    pub threshold: f64,
    pub decision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeReport {
    pub status: EyeStatus,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_asset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pvi: Option<PviSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<DiagnosisVector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnosis_summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lesions: Option<LesionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub session_id: String,
    pub patient_ref: String,
    pub generated_at: DateTime<Utc>,
    pub outcome: ReportOutcome,
    pub referral_recommended: bool,
    pub manual_review: bool,
    pub referral_reasons: Vec<ReferralReason>,
    pub eyes: BTreeMap<Eye, EyeReport>,
    pub operating_point: OperatingPoint,
    pub stage_timings_ms: BTreeMap<String, f64>,
    pub disclaimer: String,
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn failure<T>(stage: &str, outcome: &Option<StageOutcome<T>>) -> Option<String> {
    match outcome {
        Some(StageOutcome::Failed { code, message }) => Some(format!("{stage}: {code}: {message}")),
        _ => None,
    }
}

impl ScreeningReport {
    /// The report for a session whose `ReportGenerated` event is recorded.
    pub fn from_session(session: &ScreeningSession) -> Option<ScreeningReport> {
        let flags = session.report?;
        let eyes = session
            .eyes
            .iter()
            .map(|(eye, slot)| {
                let failures = [
                    failure("pvi", &slot.pvi),
                    failure("edd", &slot.diagnosis),
                    failure("vlr", &slot.lesions),
                ]
                .into_iter()
                .flatten()
                .collect();
                let diagnosis = slot.diagnosis.as_ref().and_then(|d| d.ok()).cloned();
                let report = EyeReport {
                    status: slot.status,
                    attempts: slot.captures.len() as u32,
                    quality: slot.verdicts.last().cloned(),
                    capture_asset: slot.captures.last().map(|c| c.asset.clone()),
                    pvi: slot.pvi.as_ref().and_then(|p| p.ok()).map(|p| PviSummary {
                        score: round6(p.score),
                        threshold: p.threshold,
                        decision: p.decision,
                    }),
                    diagnosis_summary: diagnosis.as_ref().map(DiagnosisVector::summary),
                    diagnosis,
                    lesions: slot.lesions.as_ref().and_then(|l| l.ok()).cloned(),
                    failures,
                };
                (*eye, report)
            })
            .collect::<BTreeMap<_, _>>();
        let ungradable = session.eyes.values().any(|s| s.status == EyeStatus::Ungradable);
        let mut reasons = Vec::new();
        if session.eyes.values().any(|s| s.pvi_positive()) {
            reasons.push(ReferralReason::PviPositive);
        }
        if ungradable {
            reasons.push(ReferralReason::Ungradable);
        }
        if flags.manual_review {
            reasons.push(ReferralReason::ManualReview);
        }
        Some(ScreeningReport {
            session_id: session.header.session_id.clone(),
            patient_ref: session.header.patient_ref.clone(),
            generated_at: flags.generated_at,
            outcome: if ungradable { ReportOutcome::Ungradable } else { ReportOutcome::Screened },
            referral_recommended: flags.referral_recommended,
            manual_review: flags.manual_review,
            referral_reasons: reasons,
            eyes,
            operating_point: session.header.operating_point.clone(),
            stage_timings_ms: session.timings.clone(),
            disclaimer: DISCLAIMER.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Referral reason with the highest priority among those in the report.
pub fn primary_reason(report: &ScreeningReport) -> ReferralReason {
    report.referral_reasons.first().copied().unwrap_or(ReferralReason::ManualReview)
}

/// Plain-text letter accompanying a referral.
pub fn referral_letter(report: &ScreeningReport, record: &ReferralRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "REFERRAL FOR EYE EXAMINATION");
    let _ = writeln!(out);
    let _ = writeln!(out, "To:       {}", record.destination);
    let _ = writeln!(out, "Patient:  {}", report.patient_ref);
    let _ = writeln!(out, "Session:  {}", report.session_id);
    let _ = writeln!(out, "Issued:   {}", record.issued_at.to_rfc3339());
    let reasons: Vec<&str> = report
        .referral_reasons
        .iter()
        .map(|r| match r {
            ReferralReason::PviPositive => "possible vision impairment detected on screening",
            ReferralReason::Ungradable => "no gradable fundus photograph could be obtained",
            ReferralReason::ManualReview => "automated screening incomplete; manual review required",
        })
        .collect();
    let _ = writeln!(out, "Reason:   {}", reasons.join("; "));
    let _ = writeln!(out);
    for (eye, e) in &report.eyes {
        let _ = write!(out, "{} eye: ", eye);
        match (&e.status, &e.pvi) {
            (EyeStatus::Ungradable, _) => {
                let _ = writeln!(out, "ungradable after {} attempt(s)", e.attempts);
            }
            (_, Some(p)) => {
                let verdict = if p.decision { "positive" } else { "negative" };
                let _ = writeln!(out, "screen {verdict} (score {:.6}, threshold {:.6})", p.score, p.threshold);
            }
            _ => {
                let _ = writeln!(out, "not screened");
            }
        }
        if let Some(summary) = &e.diagnosis_summary {
            let _ = writeln!(out, "  findings: {summary}");
        }
        if let Some(l) = &e.lesions {
            let _ = writeln!(out, "  marked regions: {} (see {})", l.components.len(), l.overlay_asset);
        }
        for f in &e.failures {
            let _ = writeln!(out, "  incomplete: {f}");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{}", report.disclaimer);
    out
}
