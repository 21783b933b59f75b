use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use vscreen_core::backends::{classify, segment, ReferenceBackend, Task};
use vscreen_core::imaging::{box_blur, extract_fov};
use vscreen_core::metrics::dice;
use vscreen_core::stages::{assess_quality, refine_mask, QualityConfig, VlrConfig};
use vscreen_harness::synth::{
    class_plan, frames, read_mask, read_truth, render_frame, synth_generate, FrameClass, SynthSpec,
};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "images", "masks"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn small() -> SynthSpec {
    SynthSpec {
        count: 20,
        size: 160,
        seed: 7,
        ..SynthSpec::default()
    }
}

#[test]
fn same_spec_gives_byte_identical_corpora() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_generate(&small(), a.path()).unwrap();
    synth_generate(&small(), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 20 + 8 + 2);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    synth_generate(&SynthSpec { seed: 8, ..small() }, c.path()).unwrap();
    assert_ne!(ta["images/syn-0000.png"], tree(c.path())["images/syn-0000.png"]);
}

#[test]
fn truth_rows_match_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let summary = synth_generate(&small(), dir.path()).unwrap();
    assert_eq!((summary.images, summary.positives, summary.ungradable), (20, 8, 2));
    let rows = read_truth(dir.path()).unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows.iter().filter(|r| r.is_positive()).count(), 8);
    assert_eq!(rows.iter().filter(|r| !r.is_gradable()).count(), 2);
    let header = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    assert!(header.starts_with("file,gradable,pvi,labels,mask_file\n"));

    let plan = class_plan(&small());
    for (i, row) in rows.iter().enumerate() {
        assert!(dir.path().join(&row.file).is_file());
        if row.is_positive() {
            assert!(!row.label_set().is_empty());
            let mask = read_mask(&dir.path().join(&row.mask_file)).unwrap();
            assert_eq!(Some(mask), render_frame(&small(), i, plan[i]).mask);
        } else {
            assert!(row.mask_file.is_empty() && row.labels.is_empty());
        }
    }
}

#[test]
fn default_corpus_class_counts() {
    let plan = class_plan(&SynthSpec::default());
    let n = |c: FrameClass| plan.iter().filter(|p| **p == c).count();
    assert_eq!(plan.len(), 200);
    assert_eq!(n(FrameClass::Positive), 80);
    assert_eq!(n(FrameClass::Ungradable), 20);
}

/// The first frames of each class from the default corpus.
fn sample(class: FrameClass, n: usize) -> Vec<vscreen_harness::synth::Frame> {
    let spec = SynthSpec::default();
    let plan = class_plan(&spec);
    plan.iter()
        .enumerate()
        .filter(|(_, c)| **c == class)
        .take(n)
        .map(|(i, c)| render_frame(&spec, i, *c))
        .collect()
}

#[test]
fn clean_frames_are_gradable_at_the_default_threshold() {
    let backend = ReferenceBackend::default();
    for frame in sample(FrameClass::Negative, 4) {
        let v = assess_quality(&frame.image, &backend, &QualityConfig::default(), 1).unwrap();
        assert!(v.gradable, "{} scored {}", frame.name, v.score);
        assert!(v.reasons.is_empty(), "{:?}", v.reasons);
    }
    for frame in sample(FrameClass::Ungradable, 3) {
        let v = assess_quality(&frame.image, &backend, &QualityConfig::default(), 1).unwrap();
        assert!(!v.gradable, "{} scored {}", frame.name, v.score);
        assert!(!v.reasons.is_empty());
    }
}

#[test]
fn sharp_frame_outscores_its_blurred_copy() {
    let backend = ReferenceBackend::default();
    for frame in sample(FrameClass::Negative, 3) {
        let sharp = classify(&backend, &frame.image, Task::Quality).unwrap().get("gradable").unwrap();
        let blurred = box_blur(&frame.image, 4);
        let soft = classify(&backend, &blurred, Task::Quality).unwrap().get("gradable").unwrap();
        assert!(sharp > soft, "{}: {sharp} vs {soft}", frame.name);
    }
}

#[test]
fn lesion_free_frames_segment_below_half() {
    let backend = ReferenceBackend::default();
    for frame in sample(FrameClass::Negative, 4) {
        let raw = segment(&backend, &frame.image).unwrap();
        assert!(raw.max() < 0.5, "{}: max {}", frame.name, raw.max());
    }
}

#[test]
fn planted_blobs_are_recovered() {
    let backend = ReferenceBackend::default();
    for frame in sample(FrameClass::Positive, 4) {
        let truth = frame.mask.as_ref().unwrap();
        let raw = segment(&backend, &frame.image).unwrap();
        let fov = extract_fov(&frame.image).unwrap();
        let refined = refine_mask(&raw, &fov.mask, &VlrConfig::default()).unwrap();
        let d = dice(&refined, truth).unwrap();
        assert!(d > 0.3, "{}: dice {d}", frame.name);
    }
}

#[test]
fn in_memory_frames_match_written_images() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { count: 3, ..small() };
    synth_generate(&spec, dir.path()).unwrap();
    for frame in frames(&spec).unwrap() {
        let bytes = fs::read(dir.path().join(frame.truth().file)).unwrap();
        assert_eq!(bytes, vscreen_core::imaging::encode_png(&frame.image).unwrap());
    }
}
