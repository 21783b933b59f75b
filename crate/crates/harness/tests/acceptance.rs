//! Acceptance suite. Runs every exit criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::collections::VecDeque;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vscreen_core::backends::protocol::{read_frame, write_frame, Request, Response};
use vscreen_core::backends::{
    classify, segment, Backend, BackendDescriptor, BackendError, BackendKind, BackendServer, Capability,
    ChannelProbeBackend, ExternalBackend, ModelRegistry, ProbabilityMask, ReferenceBackend, ScoreMap, Task,
    PROBE_MODEL_ID, REFERENCE_MODEL_ID,
};
use vscreen_core::grid::{BinaryMask, PixelGrid};
use vscreen_core::imaging::{close, dilate, encode_png, erode, erode_with_border, extract_fov_with, open, StructuringElement};
use vscreen_core::metrics::{compute_roc, dice, LabeledScore, ABOVE_ALL_SCORES};
use vscreen_core::pipeline::{
    replay, Backends, Eye, EyeStatus, MemoryStore, NextAction, Pipeline, PipelineConfig, PipelineError, SessionState,
    SessionStore, StageOutcome, StepClock,
};
use vscreen_core::stages::{calibrate_operating_point, refine_mask, OperatingPoint, Policy, VlrConfig};
use vscreen_harness::bench::bench_run;
use vscreen_harness::screen::screen_dir;
use vscreen_harness::synth::{class_plan, read_truth, render_frame, synth_generate, FrameClass, SynthSpec};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- metrics

fn random_samples(rng: &mut ChaCha8Rng, max: usize) -> Vec<LabeledScore> {
    loop {
        let n = rng.gen_range(2..=max);
        let lattice = rng.gen_bool(0.5);
        let levels = rng.gen_range(2..=30);
        let samples: Vec<LabeledScore> = (0..n)
            .map(|_| {
                let score = if lattice {
                    rng.gen_range(0..=levels) as f64 / levels as f64
                } else {
                    rng.gen_range(0.0..=1.0)
                };
                LabeledScore {
                    score,
                    label: rng.gen_bool(0.5),
                }
            })
            .collect();
        if samples.iter().any(|s| s.label) && samples.iter().any(|s| !s.label) {
            return samples;
        }
    }
}

/// Pairwise concordance in integer arithmetic: ties count half.
fn concordance(samples: &[LabeledScore]) -> f64 {
    let (mut doubled, mut p, mut n) = (0u64, 0u64, 0u64);
    for a in samples.iter().filter(|s| s.label) {
        p += 1;
        for b in samples.iter().filter(|s| !s.label) {
            doubled += match a.score.partial_cmp(&b.score).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    for _ in samples.iter().filter(|s| !s.label) {
        n += 1;
    }
    doubled as f64 / (2 * p * n) as f64
}

fn auc_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C1);
    let started = Instant::now();
    let mut worst = 0f64;
    for i in 0..200 {
        let samples = random_samples(&mut rng, 200);
        let auc = compute_roc(&samples).map_err(|e| e.to_string())?.auc;
        let diff = (auc - concordance(&samples)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-9, || format!("instance {i}: |auc - oracle| = {diff:e}"))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("200 instances, max |diff| {worst:.1e}, {secs:.2} s"))
}

fn auc_invariances() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C2);
    let mut done = 0;
    while done < 100 {
        let samples = random_samples(&mut rng, 200);
        let k = rng.gen_range(0.2..5.0);
        let f = |x: f64| (k * x).exp() - 3.0;
        let mut sorted: Vec<f64> = samples.iter().map(|s| s.score).collect();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if !sorted.windows(2).all(|w| f(w[0]) < f(w[1])) {
            continue;
        }
        let auc = compute_roc(&samples).unwrap().auc;
        let moved: Vec<LabeledScore> = samples.iter().map(|s| LabeledScore { score: f(s.score), label: s.label }).collect();
        let flipped: Vec<LabeledScore> = samples.iter().map(|s| LabeledScore { score: s.score, label: !s.label }).collect();
        let negated: Vec<LabeledScore> = samples.iter().map(|s| LabeledScore { score: -s.score, label: s.label }).collect();
        let a_moved = compute_roc(&moved).unwrap().auc;
        let a_flipped = compute_roc(&flipped).unwrap().auc;
        let a_negated = compute_roc(&negated).unwrap().auc;
        ensure((a_moved - auc).abs() <= 1e-9, || format!("instance {done}: transform moved auc {auc} -> {a_moved}"))?;
        ensure((a_flipped - (1.0 - auc)).abs() <= 1e-9, || format!("instance {done}: flip {auc} -> {a_flipped}"))?;
        ensure((a_negated - (1.0 - auc)).abs() <= 1e-9, || format!("instance {done}: negation {auc} -> {a_negated}"))?;
        done += 1;
    }
    Ok("100 instances: monotone transform, label flip and negation".into())
}

/// Exhaustive threshold sweep with brute-force counts; ties to the higher
/// threshold. Returns (threshold, sensitivity, specificity).
fn sweep(samples: &[LabeledScore], policy: Policy, target: f64) -> (f64, f64, f64) {
    let p = samples.iter().filter(|s| s.label).count() as i128;
    let n = samples.len() as i128 - p;
    let mut best: Option<(i128, f64, i128, i128)> = None;
    for t in samples.iter().map(|s| s.score).chain([ABOVE_ALL_SCORES]) {
        let tp = samples.iter().filter(|s| s.label && s.score >= t).count() as i128;
        let fp = samples.iter().filter(|s| !s.label && s.score >= t).count() as i128;
        let sens = tp as f64 / p as f64;
        let spec = (n - fp) as f64 / n as f64;
        let (feasible, key) = match policy {
            Policy::Youden => (true, tp * n - fp * p),
            Policy::TargetSensitivity => (sens >= target, -fp),
            Policy::TargetSpecificity => (spec >= target, tp),
        };
        if feasible && best.map_or(true, |(k, bt, _, _)| key > k || (key == k && t > bt)) {
            best = Some((key, t, tp, fp));
        }
    }
    let (_, t, tp, fp) = best.expect("a feasible threshold always exists for targets in [0, 1]");
    (t, tp as f64 / p as f64, (n - fp) as f64 / n as f64)
}

fn calibration_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA1B);
    for i in 0..500 {
        let samples = random_samples(&mut rng, 120);
        for policy in [Policy::Youden, Policy::TargetSensitivity, Policy::TargetSpecificity] {
            let target = match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..=1.0),
            };
            let op = calibrate_operating_point(&samples, policy, (policy != Policy::Youden).then_some(target))
                .map_err(|e| format!("instance {i} {policy}: {e}"))?;
            let (t, sens, spec) = sweep(&samples, policy, target);
            ensure(
                op.threshold == t && op.achieved_sensitivity == sens && op.achieved_specificity == spec,
                || {
                    format!(
                        "instance {i} {policy} target {target}: got ({}, {}, {}), oracle ({t}, {sens}, {spec})",
                        op.threshold, op.achieved_sensitivity, op.achieved_specificity
                    )
                },
            )?;
            if policy == Policy::TargetSensitivity {
                ensure(op.achieved_sensitivity >= target && !op.target_unattained(), || {
                    format!("instance {i}: sensitivity {} below attainable target {target}", op.achieved_sensitivity)
                })?;
            }
        }
    }
    Ok("500 instances x 3 policies match the exhaustive sweep".into())
}

// ------------------------------------------------------------- morphology

fn random_mask(rng: &mut ChaCha8Rng) -> BinaryMask {
    let (w, h) = (rng.gen_range(1..=128), rng.gen_range(1..=128));
    let density = rng.gen_range(0.0..1.0);
    if rng.gen_bool(0.5) {
        BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
    } else {
        let blocks: Vec<bool> = (0..(w / 8 + 1) * (h / 8 + 1)).map(|_| rng.gen_bool(density)).collect();
        BinaryMask::from_fn(w, h, |x, y| blocks[(y / 8) * (w / 8 + 1) + x / 8] && rng.gen_bool(0.9))
    }
}

fn morphology_laws() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0405);
    for i in 0..200 {
        let a = random_mask(&mut rng);
        let (w, h) = (a.width(), a.height());
        let b = a.or(&BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.3))).unwrap();
        let se = StructuringElement::disc(rng.gen_range(1..=4));
        let fail = |law: &str| format!("mask {i} ({w}x{h}, radius {}): {law}", se.radius());

        ensure(erode(&a, &se).is_subset_of(&a) && open(&a, &se).is_subset_of(&a), || fail("anti-extensive"))?;
        ensure(a.is_subset_of(&dilate(&a, &se)) && a.is_subset_of(&close(&a, &se)), || fail("extensive"))?;
        let (o, c) = (open(&a, &se), close(&a, &se));
        ensure(open(&o, &se) == o && close(&c, &se) == c, || fail("idempotent"))?;
        ensure(
            erode(&a, &se).is_subset_of(&erode(&b, &se))
                && dilate(&a, &se).is_subset_of(&dilate(&b, &se))
                && o.is_subset_of(&open(&b, &se))
                && c.is_subset_of(&close(&b, &se)),
            || fail("monotone"),
        )?;
        let near_edge = erode(&BinaryMask::full(w, h), &se).not();
        ensure(
            dilate(&a, &se).not() == erode_with_border(&a.not(), &se, true)
                && erode(&a, &se).not() == dilate(&a.not(), &se).or(&near_edge).unwrap(),
            || fail("duality"),
        )?;

        let (da, db) = (dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        ensure(da == db, || fail("dice symmetry"))?;
        ensure((0.0..=1.0).contains(&da), || fail("dice bounds"))?;
        ensure(dice(&a, &a).unwrap() == 1.0, || fail("dice identity"))?;
        if !a.is_empty() {
            ensure(dice(&a, &a.not()).unwrap() == 0.0, || fail("dice of disjoint masks"))?;
        }
    }
    Ok("200 masks up to 128x128: all morphology and DICE laws hold".into())
}

// ------------------------------------------------------- synthetic corpus

const SALT: f64 = 0.01;

fn vlr_refinement() -> Check {
    let spec = SynthSpec::default();
    let backend = ReferenceBackend::default();
    let cfg = VlrConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut wins, mut total, mut sum) = (0usize, 0usize, 0f64);
    for (i, class) in class_plan(&spec).into_iter().enumerate() {
        if class != FrameClass::Positive {
            continue;
        }
        let frame = render_frame(&spec, i, class);
        let truth = frame.mask.as_ref().expect("positive frames carry a mask");
        let raw = segment(&backend, &frame.image).map_err(|e| e.to_string())?;
        let salted: Vec<f32> = raw.probs().iter().map(|&p| if rng.gen_bool(SALT) { 1.0 } else { p }).collect();
        let raw = ProbabilityMask::new(raw.width(), raw.height(), salted).unwrap();
        let fov = extract_fov_with(&frame.image, &cfg.fov).map_err(|e| e.to_string())?;
        let unrefined = raw.binarize(cfg.binarize_threshold);
        let refined = refine_mask(&raw, &fov.mask, &cfg).map_err(|e| e.to_string())?;
        let (du, dr) = (dice(&unrefined, truth).unwrap(), dice(&refined, truth).unwrap());
        wins += usize::from(dr > du);
        total += 1;
        sum += dr;
    }
    let rate = wins as f64 / total as f64;
    let mean = sum / total as f64;
    let detail = format!("refined wins {wins}/{total} ({:.1}%), mean refined DICE {mean:.3}", 100.0 * rate);
    ensure(rate >= 0.90 && mean >= 0.45, || detail.clone())?;
    Ok(detail)
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PipelineConfig,
    setup_secs: f64,
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path().join("corpus");
        synth_generate(&SynthSpec::default(), &root).expect("seed-42 corpus");
        // operating point from a disjoint calibration corpus
        let calib = SynthSpec {
            count: 60,
            seed: 4242,
            ..SynthSpec::default()
        };
        let backend = ReferenceBackend::default();
        let samples: Vec<LabeledScore> = vscreen_harness::synth::frames(&calib)
            .expect("calibration spec")
            .filter(|f| f.class != FrameClass::Ungradable)
            .map(|f| LabeledScore {
                score: classify(&backend, &f.image, Task::Pvi).unwrap().get("pvi").unwrap(),
                label: f.class == FrameClass::Positive,
            })
            .collect();
        let op = calibrate_operating_point(&samples, Policy::Youden, None).expect("calibration");
        Corpus {
            _dir: dir,
            root,
            config: PipelineConfig {
                operating_point: Some(op),
                ..PipelineConfig::default()
            },
            setup_secs: started.elapsed().as_secs_f64(),
        }
    })
}

fn end_to_end() -> Check {
    let c = corpus();
    let started = Instant::now();
    let out = c.root.parent().unwrap().join("screened");
    let rows = screen_dir(&c.root, &out, c.config.clone()).map_err(|e| format!("{e:#}"))?;
    let truth = read_truth(&c.root).map_err(|e| e.to_string())?;
    ensure(rows.len() == 200 && truth.len() == 200, || format!("{} rows for {} images", rows.len(), truth.len()))?;
    let (mut quality, mut pvi) = (Vec::new(), Vec::new());
    for row in &rows {
        let t = truth
            .iter()
            .find(|t| Path::new(&t.file).file_name().and_then(|n| n.to_str()) == Some(row.file.as_str()))
            .ok_or_else(|| format!("no truth for {}", row.file))?;
        quality.push(LabeledScore { score: row.quality_score, label: t.is_gradable() });
        if let Some(score) = row.pvi_score {
            pvi.push(LabeledScore { score, label: t.is_positive() });
        }
    }
    let q_auc = compute_roc(&quality).map_err(|e| e.to_string())?.auc;
    let p_auc = compute_roc(&pvi).map_err(|e| e.to_string())?.auc;
    let secs = c.setup_secs + started.elapsed().as_secs_f64();
    let detail = format!(
        "PVI AUC {p_auc:.4} over {} screened, quality AUC {q_auc:.4} over 200, {secs:.1} s including corpus generation",
        pvi.len()
    );
    ensure(p_auc >= 0.95 && q_auc >= 0.95 && secs < 300.0, || detail.clone())?;
    Ok(detail)
}

fn budgets() -> Check {
    let c = corpus();
    let r = bench_run(&c.root, &c.config).map_err(|e| format!("{e:#}"))?;
    let peak = r.peak_rss_bytes.ok_or("peak RSS not available on this platform")?;
    let gib = peak as f64 / (1u64 << 30) as f64;
    let detail = format!(
        "{:.2} images/s over {} images, peak RSS {:.0} MiB, single worker on {}",
        r.images_per_second,
        r.images,
        gib * 1024.0,
        r.machine.cpu_model
    );
    ensure(r.reference_backends, || "bench did not use reference backends".into())?;
    ensure(r.images_per_second >= 1.0 && gib < 4.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------- state machine

const SIDE: usize = 16;
const PVI_THRESHOLD: f64 = 0.5;

/// Probe backend recording each call's channel-1 mean, failing on schedule.
struct Scripted {
    inner: ChannelProbeBackend,
    failures: Mutex<VecDeque<bool>>,
    gated_calls: Mutex<Vec<f64>>,
}

fn pvi_channel(image: &PixelGrid) -> f64 {
    let c = image.channels();
    image.values().iter().skip(1).step_by(c).map(|&v| v as f64).sum::<f64>() / image.pixel_count() as f64
}

impl Scripted {
    fn fail(&self) -> Result<(), BackendError> {
        if self.failures.lock().unwrap().pop_front().unwrap_or(false) {
            return Err(BackendError::Unavailable {
                backend: "scripted".into(),
                reason: "scheduled failure".into(),
            });
        }
        Ok(())
    }
}

impl Backend for Scripted {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn classify_raw(&self, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError> {
        if task == Task::Edd {
            self.gated_calls.lock().unwrap().push(pvi_channel(image));
        }
        self.fail()?;
        self.inner.classify_raw(image, task)
    }

    fn segment_raw(&self, image: &PixelGrid) -> Result<ProbabilityMask, BackendError> {
        self.gated_calls.lock().unwrap().push(pvi_channel(image));
        self.fail()?;
        self.inner.segment_raw(image)
    }
}

enum Op {
    Submit(Eye, [u8; 3]),
    Garbage(Eye),
    Screen,
    Refer,
    Report,
}

fn random_op(rng: &mut ChaCha8Rng) -> Op {
    let eye = if rng.gen_bool(0.5) { Eye::Left } else { Eye::Right };
    let mut level = || match rng.gen_range(0..3) {
        0 => rng.gen_range(0..=100),
        1 => rng.gen_range(100..=160),
        _ => rng.gen_range(160..=255),
    };
    let levels = [level(), level(), level()];
    match rng.gen_range(0..11) {
        0..=5 => Op::Submit(eye, levels),
        6 => Op::Garbage(eye),
        7 | 8 => Op::Screen,
        9 => Op::Refer,
        _ => Op::Report,
    }
}

fn probe_capture(levels: [u8; 3]) -> Vec<u8> {
    let v = levels.map(|l| l as f32 / 255.0);
    encode_png(&PixelGrid::from_fn(SIDE, SIDE, 3, |_, _, c| v[c]).unwrap()).unwrap()
}

fn run_script(rng: &mut ChaCha8Rng) -> Result<SessionState, String> {
    let two_eyes = rng.gen_bool(0.5);
    let failures: VecDeque<bool> = (0..rng.gen_range(0..40)).map(|_| rng.gen_bool(0.08)).collect();
    let backend = Arc::new(Scripted {
        inner: ChannelProbeBackend::default(),
        failures: Mutex::new(failures),
        gated_calls: Mutex::new(Vec::new()),
    });
    let store = Arc::new(MemoryStore::new());
    let config = PipelineConfig {
        working_resolution: SIDE,
        eyes: if two_eyes { vec![Eye::Left, Eye::Right] } else { vec![Eye::Left] },
        ..PipelineConfig::default()
    };
    let op = OperatingPoint {
        threshold: PVI_THRESHOLD,
        policy: Policy::Youden,
        target: None,
        achieved_sensitivity: 1.0,
        achieved_specificity: 1.0,
        calibration_set_id: "sha256:script".into(),
    };
    let p = Pipeline::with_parts(config, op, Backends::uniform(backend.clone()), store.clone(), Arc::new(StepClock::default()))
        .map_err(|e| e.to_string())?;
    let id = p.create_session("P-0001").map_err(|e| e.to_string())?.header.session_id;

    for step in 0..rng.gen_range(1..16) {
        let op = random_op(rng);
        let before = p.session(&id).map_err(|e| e.to_string())?;
        let unexpected = |e: PipelineError| format!("step {step}: unexpected {e}");
        match op {
            Op::Submit(eye, levels) => match p.submit_capture(&id, eye, &probe_capture(levels)) {
                Ok(o) => {
                    let attempts = p.session(&id).unwrap().slot(eye).unwrap().captures.len();
                    if o.action == NextAction::SessionUngradable {
                        ensure(attempts == 3, || format!("abandoned after {attempts} attempts"))?;
                    }
                }
                Err(
                    PipelineError::WrongState { .. }
                    | PipelineError::EyeNotConfigured(_)
                    | PipelineError::EyeAlreadyResolved(_)
                    | PipelineError::WrongEye { .. },
                ) => {}
                Err(e) => return Err(unexpected(e)),
            },
            Op::Garbage(eye) => {
                ensure(p.submit_capture(&id, eye, b"not an image").is_err(), || "garbage accepted".into())?;
                ensure(p.session(&id).unwrap().events.len() == before.events.len(), || "garbage left events".into())?;
            }
            Op::Screen => match p.run_screening(&id) {
                Ok(_) | Err(PipelineError::WrongState { .. }) => {}
                Err(e) => return Err(unexpected(e)),
            },
            Op::Refer => match p.issue_referral(&id, None) {
                Ok(_)
                | Err(PipelineError::NotEligible | PipelineError::AlreadyReferred | PipelineError::WrongState { .. }) => {}
                Err(e) => return Err(unexpected(e)),
            },
            Op::Report => match p.report(&id) {
                Ok(_) | Err(PipelineError::ReportNotReady(_)) => {}
                Err(e) => return Err(unexpected(e)),
            },
        }

        let live = p.session(&id).unwrap();
        let (header, events) = store.load(&id).map_err(|e| e.to_string())?;
        ensure(replay(header, events).map_err(|e| e.to_string())? == live, || format!("step {step}: replay differs"))?;
        for slot in live.eyes.values() {
            ensure(slot.captures.len() <= 3, || format!("{} capture attempts", slot.captures.len()))?;
            ensure(slot.pvi_positive() || (slot.diagnosis.is_none() && slot.lesions.is_none()), || {
                "diagnosis or lesions without a positive PVI".into()
            })?;
        }
        if let Some(flags) = &live.report {
            let ungradable = live.eyes.values().any(|s| s.status == EyeStatus::Ungradable);
            let negative = live
                .eyes
                .values()
                .all(|s| matches!(&s.pvi, Some(StageOutcome::Ok(p)) if !p.decision));
            ensure(!ungradable || flags.referral_recommended, || "ungradable session not referred".into())?;
            ensure(!negative || !flags.referral_recommended, || "negative session recommended for referral".into())?;
        }
    }
    let gated = backend.gated_calls.lock().unwrap();
    ensure(gated.iter().all(|v| *v >= PVI_THRESHOLD), || "EDD or VLR ran below the PVI threshold".into())?;
    Ok(p.session(&id).unwrap().state)
}

fn state_machine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E55);
    let mut finals = std::collections::BTreeMap::<&str, usize>::new();
    for i in 0..1000 {
        let state = run_script(&mut rng).map_err(|e| format!("script {i}: {e}"))?;
        *finals.entry(state.as_str()).or_default() += 1;
    }
    let spread: Vec<String> = finals.iter().map(|(s, n)| format!("{s} {n}")).collect();
    Ok(format!("1000 scripts; final states: {}", spread.join(", ")))
}

// --------------------------------------------------------------- protocol

fn fixture_lines(name: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/protocol");
    std::fs::read(dir.join(name))
        .unwrap_or_default()
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(<[u8]>::to_vec)
        .collect()
}

fn protocol_conformance() -> Check {
    let requests = fixture_lines("requests.jsonl");
    let responses = fixture_lines("responses.jsonl");
    ensure(requests.len() == 50 && responses.len() == 50, || {
        format!("expected 50 fixtures, found {} requests and {} responses", requests.len(), responses.len())
    })?;
    let probe: Arc<dyn Backend> = Arc::new(ChannelProbeBackend::default());
    let reference: Arc<dyn Backend> = Arc::new(ReferenceBackend::default());
    let registry: ModelRegistry = [(PROBE_MODEL_ID.to_string(), probe), (REFERENCE_MODEL_ID.to_string(), reference)].into();
    let server = BackendServer::spawn("127.0.0.1:0", registry).map_err(|e| e.to_string())?;
    let mut stream = TcpStream::connect(server.addr()).map_err(|e| e.to_string())?;
    for (i, (req, expected)) in requests.iter().zip(&responses).enumerate() {
        write_frame(&mut stream, req).map_err(|e| e.to_string())?;
        let got = read_frame(&mut stream).map_err(|e| e.to_string())?;
        ensure(&got == expected, || format!("fixture {i}: response bytes differ"))?;
    }

    // the typed client decodes the same scores bit for bit
    let client = ExternalBackend::new(BackendDescriptor {
        kind: BackendKind::External,
        model_id: PROBE_MODEL_ID.into(),
        capabilities: [Capability::ClassifyQuality, Capability::ClassifyPvi, Capability::ClassifyEdd, Capability::Segment].into(),
        endpoint: Some(server.addr().to_string()),
    })
    .map_err(|e| e.to_string())?;
    let mut typed = 0;
    for (req, expected) in requests.iter().zip(&responses) {
        let (Ok(req), Ok(resp)) = (serde_json::from_slice::<Request>(req), serde_json::from_slice::<Response>(expected)) else {
            continue;
        };
        if resp.error.is_some() {
            continue;
        }
        let image = req.image.to_grid().map_err(|e| e.to_string())?;
        match (req.task, resp.scores, resp.mask) {
            (Some(task), Some(scores), _) => {
                let got = classify(&client, &image, task).map_err(|e| e.to_string())?;
                ensure(
                    scores.iter().all(|(k, v)| got.entries.get(k).map(|g| g.to_bits()) == Some(v.to_bits())),
                    || format!("{}: client scores differ", req.id),
                )?;
            }
            (None, _, Some(mask)) => {
                let got = segment(&client, &image).map_err(|e| e.to_string())?;
                ensure(got == mask.to_mask().map_err(|e| e.to_string())?, || format!("{}: client mask differs", req.id))?;
            }
            _ => return Err(format!("{}: fixture response has no payload", req.id)),
        }
        typed += 1;
    }
    server.shutdown();
    Ok(format!("50 fixtures byte-exact over loopback; {typed} decoded bit-exact by the client"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("auc-oracle-equivalence", auc_oracle_equivalence),
        ("auc-invariances", auc_invariances),
        ("calibration-sweep-oracle", calibration_oracle),
        ("morphology-and-dice-laws", morphology_laws),
        ("vlr-refinement", vlr_refinement),
        ("end-to-end-synthetic", end_to_end),
        ("state-machine-scripts", state_machine),
        ("budgets", budgets),
        ("protocol-self-conformance", protocol_conformance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
