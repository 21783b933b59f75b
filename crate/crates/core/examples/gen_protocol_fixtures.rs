//! Regenerates the wire-protocol conformance fixtures.
//!
//! ```text
//! cargo run -p vscreen-core --example gen_protocol_fixtures -- fixtures/protocol
//! ```
//!
//! Writes `requests.jsonl` and `responses.jsonl`: line i of each is the
//! exact payload of request i and of its expected response. Successful
//! responses are computed here from the probe model's definition and then
//! checked against the in-process server.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vscreen_core::backends::protocol::{codes, ImageEncoding, ImagePayload, MaskPayload, Op, Request, Response};
use vscreen_core::backends::{
    handle_payload, Backend, ChannelProbeBackend, DiseaseLabel, ModelRegistry, ProbabilityMask, Task, PROBE_MODEL_ID,
    PVI_LABEL, QUALITY_LABEL,
};
use vscreen_core::grid::PixelGrid;

const SEED: u64 = 0x5eed_f1c5;

fn image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> PixelGrid {
    // 8-bit levels survive the PNG encoding exactly
    PixelGrid::from_fn(w, h, c, |_, _, _| rng.gen_range(0u8..=255) as f32 / 255.0).unwrap()
}

fn channel_mean(g: &PixelGrid, c: usize) -> f64 {
    let c = if g.channels() == 1 { 0 } else { c };
    let mut sum = 0.0f64;
    for y in 0..g.height() {
        for x in 0..g.width() {
            sum += g.get(x, y, c) as f64;
        }
    }
    (sum / g.pixel_count() as f64).clamp(0.0, 1.0)
}

fn expected_classify(id: &str, g: &PixelGrid, task: Task) -> Response {
    let scores: BTreeMap<String, f64> = match task {
        Task::Quality => [(QUALITY_LABEL.to_string(), channel_mean(g, 0))].into(),
        Task::Pvi => [(PVI_LABEL.to_string(), channel_mean(g, 1))].into(),
        Task::Edd => DiseaseLabel::ALL
            .iter()
            .map(|l| {
                let p = if *l == DiseaseLabel::Amd { channel_mean(g, 2) } else { 0.1 };
                (l.as_str().to_string(), p)
            })
            .collect(),
    };
    Response {
        id: id.into(),
        model: Some(PROBE_MODEL_ID.into()),
        scores: Some(scores),
        ..Response::default()
    }
}

fn expected_segment(id: &str, g: &PixelGrid) -> Response {
    let c = if g.channels() == 1 { 0 } else { 2 };
    let mut probs = Vec::with_capacity(g.pixel_count());
    for y in 0..g.height() {
        for x in 0..g.width() {
            probs.push(g.get(x, y, c));
        }
    }
    let mask = ProbabilityMask::new(g.width(), g.height(), probs).unwrap();
    Response {
        id: id.into(),
        model: Some(PROBE_MODEL_ID.into()),
        mask: Some(MaskPayload::from_mask(&mask)),
        ..Response::default()
    }
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/protocol".into()));
    fs::create_dir_all(&out).expect("create output directory");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let probe: Arc<dyn Backend> = Arc::new(ChannelProbeBackend::default());
    let registry: ModelRegistry = [(PROBE_MODEL_ID.to_string(), probe)].into();

    let shapes = [(1, 1), (3, 2), (8, 8), (16, 9), (5, 12)];
    let tasks = [Task::Quality, Task::Pvi, Task::Edd];
    let encodings = [ImageEncoding::F32leB64, ImageEncoding::PngB64];
    let mut cases: Vec<(Vec<u8>, Option<Response>, Option<&str>)> = Vec::new();

    // 36 classify requests
    for i in 0..36 {
        let (w, h) = shapes[i % shapes.len()];
        let c = if i % 4 == 3 { 1 } else { 3 };
        let g = image(&mut rng, w, h, c);
        let task = tasks[i % 3];
        let id = format!("fx-{:02}", cases.len());
        let req = Request {
            id: id.clone(),
            op: Op::Classify,
            task: Some(task),
            model: PROBE_MODEL_ID.into(),
            image: ImagePayload::from_grid(&g, encodings[(i / 3) % 2]).unwrap(),
        };
        cases.push((req.to_bytes(), Some(expected_classify(&id, &g, task)), None));
    }
    // 8 segment requests
    for i in 0..8 {
        let (w, h) = shapes[i % shapes.len()];
        let c = if i % 3 == 2 { 1 } else { 3 };
        let g = image(&mut rng, w, h, c);
        let id = format!("fx-{:02}", cases.len());
        let req = Request {
            id: id.clone(),
            op: Op::Segment,
            task: None,
            model: PROBE_MODEL_ID.into(),
            image: ImagePayload::from_grid(&g, encodings[i % 2]).unwrap(),
        };
        cases.push((req.to_bytes(), Some(expected_segment(&id, &g)), None));
    }
    // 6 protocol errors
    let g = image(&mut rng, 2, 2, 3);
    let good = ImagePayload::from_grid(&g, ImageEncoding::F32leB64).unwrap();
    let image_json = serde_json::to_string(&good).unwrap();
    let mut short = good.clone();
    short.w = 3;
    let mut hot = good.clone();
    hot.data = {
        use base64::Engine;
        let mut bytes = base64::engine::general_purpose::STANDARD.decode(&good.data).unwrap();
        bytes[..4].copy_from_slice(&1.5f32.to_le_bytes());
        base64::engine::general_purpose::STANDARD.encode(bytes)
    };
    let raw_errors: Vec<(String, &str)> = vec![
        (
            format!(r#"{{"id":"fx-44","op":"classify","task":"pvi","model":"no-such-model","image":{image_json}}}"#),
            codes::UNKNOWN_MODEL,
        ),
        (
            format!(r#"{{"id":"fx-45","op":"detect","task":"pvi","model":"{PROBE_MODEL_ID}","image":{image_json}}}"#),
            codes::UNSUPPORTED_OP,
        ),
        (
            format!(r#"{{"id":"fx-46","op":"classify","task":"glaucoma","model":"{PROBE_MODEL_ID}","image":{image_json}}}"#),
            codes::UNSUPPORTED_TASK,
        ),
        (
            format!(
                r#"{{"id":"fx-47","op":"classify","task":"quality","model":"{PROBE_MODEL_ID}","image":{}}}"#,
                serde_json::to_string(&short).unwrap()
            ),
            codes::BAD_IMAGE,
        ),
        (
            format!(
                r#"{{"id":"fx-48","op":"segment","task":null,"model":"{PROBE_MODEL_ID}","image":{}}}"#,
                serde_json::to_string(&hot).unwrap()
            ),
            codes::BAD_IMAGE,
        ),
        (
            format!(r#"{{"id":"fx-49","op":"classify","task":null,"model":"{PROBE_MODEL_ID}","image":{image_json}}}"#),
            codes::BAD_REQUEST,
        ),
    ];
    for (raw, code) in raw_errors {
        cases.push((raw.into_bytes(), None, Some(code)));
    }
    assert_eq!(cases.len(), 50);

    let mut requests = fs::File::create(out.join("requests.jsonl")).unwrap();
    let mut responses = fs::File::create(out.join("responses.jsonl")).unwrap();
    for (i, (req, expected, code)) in cases.iter().enumerate() {
        let served = handle_payload(&registry, req);
        match (expected, code) {
            (Some(exp), _) => assert_eq!(&served, exp, "fixture {i}: server disagrees with the probe definition"),
            (None, Some(code)) => assert_eq!(served.error.as_ref().map(|e| e.code.as_str()), Some(*code), "fixture {i}"),
            _ => unreachable!(),
        }
        requests.write_all(req).unwrap();
        requests.write_all(b"\n").unwrap();
        responses.write_all(&served.to_bytes()).unwrap();
        responses.write_all(b"\n").unwrap();
    }
    println!("wrote {} fixtures to {}", cases.len(), out.display());
}
