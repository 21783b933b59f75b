//! Batch screening over a directory of captures. Each image becomes its
//! own single-eye session with one capture attempt; the session directory
//! under the output root holds the report and every asset.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vscreen_core::pipeline::{
    Eye, FileStore, Pipeline, PipelineConfig, ReportOutcome, SessionState, StageOutcome,
    REPORT_ASSET,
};

pub const SUMMARY_FILE: &str = "screening.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub file: String,
    pub session_id: String,
    pub outcome: String,
    pub quality_score: f64,
    /// Empty when the capture never reached the PVI stage.
    pub pvi_score: Option<f64>,
    pub pvi_positive: bool,
    pub referral_recommended: bool,
    pub manual_review: bool,
    pub report: String,
}

/// Image files directly under `dir`, or under `dir/images` when present,
/// sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let nested = dir.join(crate::synth::IMAGES_DIR);
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut out = Vec::new();
    for entry in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Session id derived from a file stem.
pub fn session_id_for(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("capture");
    let id: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .take(128)
        .collect();
    if id.is_empty() {
        "capture".into()
    } else {
        id
    }
}

/// Screens one capture through a fresh session.
pub fn screen_one(pipeline: &Pipeline, path: &Path, display_name: &str) -> Result<ScreenRow> {
    let id = session_id_for(path);
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    pipeline.create_session_with_id(&id, display_name)?;
    let eye = pipeline.config().eyes.first().copied().unwrap_or(Eye::Left);
    let outcome = pipeline.submit_capture(&id, eye, &bytes)?;
    let report = match pipeline.session(&id)?.state {
        SessionState::Screening => pipeline.run_screening(&id)?,
        _ => pipeline.report(&id)?,
    };
    let session = pipeline.session(&id)?;
    let pvi = session.slot(eye).and_then(|s| s.pvi.as_ref()).and_then(StageOutcome::ok);
    Ok(ScreenRow {
        file: display_name.to_string(),
        session_id: id.clone(),
        outcome: match report.outcome {
            ReportOutcome::Screened => "screened".into(),
            ReportOutcome::Ungradable => "ungradable".into(),
        },
        quality_score: outcome.verdict.score,
        pvi_score: pvi.map(|p| p.score),
        pvi_positive: pvi.is_some_and(|p| p.decision),
        referral_recommended: report.referral_recommended,
        manual_review: report.manual_review,
        report: format!("{id}/{REPORT_ASSET}"),
    })
}

/// Screens every image under `input`, writing sessions and a summary CSV
/// under `out`. A capture is never retried in batch mode.
pub fn screen_dir(input: &Path, out: &Path, mut config: PipelineConfig) -> Result<Vec<ScreenRow>> {
    let images = list_images(input)?;
    if images.is_empty() {
        bail!("no .png or .jpg images under {}", input.display());
    }
    config.quality.max_attempts = 1;
    config.eyes.truncate(1);
    let store = Arc::new(FileStore::open(out)?);
    let pipeline = Pipeline::new(config, store)?;
    let mut rows = Vec::with_capacity(images.len());
    for path in &images {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        rows.push(screen_one(&pipeline, path, &name).with_context(|| format!("screening {name}"))?);
    }
    let summary = out.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary).with_context(|| format!("writing {}", summary.display()))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<ScreenRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vscreen_core::pipeline::is_safe_name;

    #[test]
    fn ids_are_safe() {
        for (file, id) in [
            ("a/syn-0001.png", "syn-0001"),
            ("x/my photo.v2.jpg", "my-photo-v2"),
            ("x/.hidden.png", "-hidden"),
        ] {
            let got = session_id_for(Path::new(file));
            assert_eq!(got, id);
            assert!(is_safe_name(&got));
        }
    }
}
