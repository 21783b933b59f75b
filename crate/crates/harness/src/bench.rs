//! Single-threaded throughput and memory benchmark: every corpus image
//! goes through a full session, one at a time, with the configured
//! backends.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vscreen_core::backends::BackendKind;
use vscreen_core::pipeline::{Eye, MemoryStore, Pipeline, PipelineConfig, SessionState, SystemClock};
use vscreen_core::stages::{OperatingPoint, Policy};

use crate::screen::list_images;

pub const MIN_CORPUS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: String,
    pub samples: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineFingerprint {
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub total_memory_bytes: Option<u64>,
    pub os: String,
    pub arch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub images: usize,
    pub wall_seconds: f64,
    pub images_per_second: f64,
    /// Per-image session latency, capture bytes to report.
    pub end_to_end: StageLatency,
    pub stages: Vec<StageLatency>,
    pub peak_rss_bytes: Option<u64>,
    /// True when every stage ran on in-process reference backends.
    pub reference_backends: bool,
    pub machine: MachineFingerprint,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[rank]
}

fn latency(stage: &str, samples: &[f64]) -> StageLatency {
    StageLatency {
        stage: stage.to_string(),
        samples: samples.len(),
        p50_ms: percentile(samples, 0.50),
        p95_ms: percentile(samples, 0.95),
    }
}

fn proc_status_kib(field: &str) -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(field))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// High-water resident set size of this process, where the OS reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    proc_status_kib("VmHWM:").map(|kib| kib * 1024)
}

pub fn machine_fingerprint() -> MachineFingerprint {
    let cpu_model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    let total_memory_bytes = fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        let line = s.lines().find(|l| l.starts_with("MemTotal:"))?;
        line.split_whitespace().nth(1)?.parse::<u64>().ok().map(|k| k * 1024)
    });
    MachineFingerprint {
        cpu_model,
        logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        total_memory_bytes,
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
    }
}

/// Fixed threshold used when the config carries no operating point.
pub fn uncalibrated_operating_point() -> OperatingPoint {
    OperatingPoint {
        threshold: 0.5,
        policy: Policy::Youden,
        target: None,
        achieved_sensitivity: 0.0,
        achieved_specificity: 0.0,
        calibration_set_id: "uncalibrated".into(),
    }
}

pub fn bench_run(corpus: &Path, config: &PipelineConfig) -> Result<BenchResult> {
    let images = list_images(corpus)?;
    if images.len() < MIN_CORPUS {
        bail!("bench needs at least {MIN_CORPUS} images, found {}", images.len());
    }
    let mut config = config.clone();
    config.quality.max_attempts = 1;
    config.eyes = vec![Eye::Left];
    let op = match &config.operating_point {
        Some(op) => op.clone(),
        None => uncalibrated_operating_point(),
    };
    let backends = config.build_backends()?;
    let b = &config.backends;
    let reference_backends = [&b.quality, &b.pvi, &b.edd, &b.vlr]
        .iter()
        .all(|s| s.kind == BackendKind::Reference);
    let pipeline = Pipeline::with_parts(
        config,
        op,
        backends,
        Arc::new(MemoryStore::new()),
        Arc::new(SystemClock::new()),
    )?;

    let mut stage_ms: [(&str, Vec<f64>); 4] =
        [("quality", vec![]), ("pvi", vec![]), ("edd", vec![]), ("vlr", vec![])];
    let mut per_image = Vec::with_capacity(images.len());
    let started = Instant::now();
    for (i, path) in images.iter().enumerate() {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let t0 = Instant::now();
        let id = format!("bench-{i:05}");
        pipeline.create_session_with_id(&id, "bench")?;
        pipeline.submit_capture(&id, Eye::Left, &bytes)?;
        if pipeline.session(&id)?.state == SessionState::Screening {
            pipeline.run_screening(&id)?;
        }
        per_image.push(t0.elapsed().as_secs_f64() * 1000.0);
        for event in &pipeline.session(&id)?.events {
            if let Some((stage, ms)) = event.body.timing() {
                if let Some((_, v)) = stage_ms.iter_mut().find(|(s, _)| *s == stage) {
                    v.push(ms);
                }
            }
        }
    }
    let wall_seconds = started.elapsed().as_secs_f64();
    Ok(BenchResult {
        images: images.len(),
        wall_seconds,
        images_per_second: images.len() as f64 / wall_seconds.max(f64::MIN_POSITIVE),
        end_to_end: latency("session", &per_image),
        stages: stage_ms.iter().map(|(s, v)| latency(s, v)).collect(),
        peak_rss_bytes: peak_rss_bytes(),
        reference_backends,
        machine: machine_fingerprint(),
    })
}
