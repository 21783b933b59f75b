//! Synthetic fundus corpus.
//!
//! Each frame is a dark background with a bright reddish disc, a radial
//! vignette, faint curved vessel strokes and per-pixel texture noise.
//! Positive frames carry one to three Gaussian lesion blobs (bright or
//! dark); the planted mask is every pixel where a blob's profile is at
//! least half its peak. Ungradable frames are negatives that have been
//! blurred, darkened and shadowed.
//!
//! Class assignment is exact: `round(prevalence * count)` positives and
//! `round(fraction_ungradable * count)` ungradable negatives, placed by a
//! seeded shuffle. Every frame is drawn from its own RNG stream, so the
//! output is a pure function of the spec.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vscreen_core::backends::DiseaseLabel;
use vscreen_core::grid::{BinaryMask, PixelGrid};
use vscreen_core::imaging::{box_blur, decode_any, encode_mask_png, encode_png};

pub const TRUTH_FILE: &str = "truth.csv";
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

/// Fundus tint applied to the luminance field.
const TINT: [f32; 3] = [1.0, 0.52, 0.28];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionKind {
    /// Drusen-like.
    BrightBlob,
    /// Haemorrhage-like.
    DarkBlob,
}

impl LesionKind {
    pub fn label(self) -> DiseaseLabel {
        match self {
            LesionKind::BrightBlob => DiseaseLabel::Amd,
            LesionKind::DarkBlob => DiseaseLabel::Dr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub seed: u64,
    /// Fraction of PVI-positive frames.
    pub prevalence: f64,
    pub lesion_kinds: Vec<LesionKind>,
    /// Fraction of FOV pixels set to full white before any degradation.
    pub salt_fraction: f64,
    /// Box-blur radius for ungradable frames.
    pub blur_radius: usize,
    pub fraction_ungradable: f64,
    pub size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 200,
            seed: 42,
            prevalence: 0.4,
            lesion_kinds: vec![LesionKind::BrightBlob, LesionKind::DarkBlob],
            salt_fraction: 0.0,
            blur_radius: 5,
            fraction_ungradable: 0.1,
            size: 512,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("truth.csv: {0}")]
    Truth(String),
    #[error("{0}")]
    Image(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SynthSpec {
    pub fn positives(&self) -> usize {
        (self.prevalence * self.count as f64).round() as usize
    }

    pub fn ungradable(&self) -> usize {
        (self.fraction_ungradable * self.count as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        for (name, v) in [
            ("prevalence", self.prevalence),
            ("salt_fraction", self.salt_fraction),
            ("fraction_ungradable", self.fraction_ungradable),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.positives() + self.ungradable() > self.count {
            return bad(format!(
                "{} positives and {} ungradable frames do not fit in {}",
                self.positives(),
                self.ungradable(),
                self.count
            ));
        }
        if self.positives() > 0 && self.lesion_kinds.is_empty() {
            return bad("positive frames need at least one lesion kind".into());
        }
        if self.size < 64 {
            return bad(format!("size {} is below 64", self.size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameClass {
    Negative,
    Positive,
    Ungradable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub file: String,
    pub gradable: u8,
    pub pvi: u8,
    /// `;`-separated disease labels, empty for negatives.
    pub labels: String,
    /// Relative path of the planted mask, empty for negatives.
    pub mask_file: String,
}

impl TruthRow {
    pub fn is_gradable(&self) -> bool {
        self.gradable == 1
    }

    pub fn is_positive(&self) -> bool {
        self.pvi == 1
    }

    pub fn label_set(&self) -> Vec<DiseaseLabel> {
        self.labels.split(';').filter_map(DiseaseLabel::parse).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub name: String,
    pub class: FrameClass,
    pub image: PixelGrid,
    /// Planted lesion truth, positives only.
    pub mask: Option<BinaryMask>,
    pub lesions: Vec<LesionKind>,
}

impl Frame {
    pub fn truth(&self) -> TruthRow {
        let mut labels: Vec<&str> = self.lesions.iter().map(|k| k.label().as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        TruthRow {
            file: format!("{IMAGES_DIR}/{}.png", self.name),
            gradable: u8::from(self.class != FrameClass::Ungradable),
            pvi: u8::from(self.class == FrameClass::Positive),
            labels: labels.join(";"),
            mask_file: if self.mask.is_some() {
                format!("{MASKS_DIR}/{}.png", self.name)
            } else {
                String::new()
            },
        }
    }
}

/// Class of every frame index, fixed by the spec seed.
pub fn class_plan(spec: &SynthSpec) -> Vec<FrameClass> {
    let mut plan = vec![FrameClass::Negative; spec.count];
    plan[..spec.positives()].fill(FrameClass::Positive);
    let u = spec.positives() + spec.ungradable();
    plan[spec.positives()..u].fill(FrameClass::Ungradable);
    plan.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    plan
}

pub fn frame_name(index: usize) -> String {
    format!("syn-{index:04}")
}

struct Blob {
    kind: LesionKind,
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
}

impl Blob {
    fn profile(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.cx).powi(2) + (y - self.cy).powi(2);
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Quadratic Bezier stroke sampled as a polyline.
struct Vessel {
    points: Vec<(f64, f64)>,
    half_width: f64,
    depth: f64,
}

impl Vessel {
    fn random(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64) -> Self {
        let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r0 = rng.gen_range(0.05..0.25) * radius;
        let a2 = a0 + rng.gen_range(-0.9..0.9);
        let r2 = rng.gen_range(0.85..1.05) * radius;
        let a1 = (a0 + a2) / 2.0 + rng.gen_range(-0.5..0.5);
        let r1 = (r0 + r2) / 2.0;
        let p = |a: f64, r: f64| (cx + r * a.cos(), cy + r * a.sin());
        let (p0, p1, p2) = (p(a0, r0), p(a1, r1), p(a2, r2));
        let n = 64;
        let points = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let u = 1.0 - t;
                (
                    u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
                    u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
                )
            })
            .collect();
        Self {
            points,
            half_width: rng.gen_range(0.8..1.6),
            depth: rng.gen_range(0.05..0.09),
        }
    }

    /// Darkening factor contribution at a pixel, 0 away from the stroke.
    fn stamp(&self, field: &mut [f64], size: usize) {
        let reach = self.half_width + 1.5;
        for seg in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let lo_x = (x0.min(x1) - reach).floor().max(0.0) as usize;
            let hi_x = ((x0.max(x1) + reach).ceil() as usize).min(size - 1);
            let lo_y = (y0.min(y1) - reach).floor().max(0.0) as usize;
            let hi_y = ((y0.max(y1) + reach).ceil() as usize).min(size - 1);
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = (dx * dx + dy * dy).max(1e-12);
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let t = (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0);
                    let d = ((px - x0 - t * dx).powi(2) + (py - y0 - t * dy).powi(2)).sqrt();
                    let cover = (self.half_width + 0.5 - d).clamp(0.0, 1.0);
                    let i = y * size + x;
                    field[i] = field[i].max(cover * self.depth);
                }
            }
        }
    }
}

/// Renders frame `index` of the corpus.
pub fn render_frame(spec: &SynthSpec, index: usize, class: FrameClass) -> Frame {
    let size = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let scale = size as f64 / 512.0;

    let cx = size as f64 / 2.0 + rng.gen_range(-6.0..6.0) * scale;
    let cy = size as f64 / 2.0 + rng.gen_range(-6.0..6.0) * scale;
    let radius = rng.gen_range(215.0..235.0) * scale;
    let level = rng.gen_range(0.42..0.52);
    let falloff = rng.gen_range(0.25..0.4);

    let mut vessel_depth = vec![0f64; size * size];
    for _ in 0..rng.gen_range(7..12) {
        Vessel::random(&mut rng, cx, cy, radius).stamp(&mut vessel_depth, size);
    }

    let mut blobs: Vec<Blob> = Vec::new();
    if class == FrameClass::Positive {
        let n = rng.gen_range(1..=3);
        let mut tries = 0;
        while blobs.len() < n && tries < 200 {
            tries += 1;
            let sigma = rng.gen_range(5.0..9.0) * scale;
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..0.72) * radius;
            let (bx, by) = (cx + r * a.cos(), cy + r * a.sin());
            if blobs
                .iter()
                .any(|b| ((b.cx - bx).powi(2) + (b.cy - by).powi(2)).sqrt() < 4.0 * (b.sigma + sigma))
            {
                continue;
            }
            let kind = spec.lesion_kinds[rng.gen_range(0..spec.lesion_kinds.len())];
            blobs.push(Blob {
                kind,
                cx: bx,
                cy: by,
                sigma,
                amplitude: rng.gen_range(0.26..0.36),
            });
        }
    }

    let texture = Normal::new(0.0, 0.035).expect("valid sigma");
    let mut lum = vec![0f32; size * size];
    let mut mask = BinaryMask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let edge = (radius + 0.5 - d).clamp(0.0, 1.0);
            let noise: f64 = texture.sample(&mut rng);
            if edge <= 0.0 {
                lum[y * size + x] = (0.01 + noise * 0.1).clamp(0.0, 1.0) as f32;
                continue;
            }
            let rr = d / radius;
            let mut v = level * (1.0 - falloff * rr * rr) * (1.0 - vessel_depth[y * size + x]);
            let mut planted = false;
            for b in &blobs {
                let g = b.profile(px, py);
                v *= match b.kind {
                    LesionKind::BrightBlob => 1.0 + b.amplitude * g,
                    LesionKind::DarkBlob => 1.0 - b.amplitude * g,
                };
                planted |= g >= 0.5;
            }
            if planted {
                mask.set(x, y, true);
            }
            v += noise;
            lum[y * size + x] = (v * edge + 0.01 * (1.0 - edge)).clamp(0.0, 1.0) as f32;
        }
    }

    if spec.salt_fraction > 0.0 {
        for y in 0..size {
            for x in 0..size {
                let inside = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) < radius * radius;
                if inside && rng.gen_bool(spec.salt_fraction) {
                    lum[y * size + x] = 1.0;
                }
            }
        }
    }

    let mut image = PixelGrid::from_fn(size, size, 3, |x, y, c| (lum[y * size + x] * TINT[c]).min(1.0))
        .expect("non-empty frame");

    if class == FrameClass::Ungradable {
        image = box_blur(&image, spec.blur_radius);
        let dim = rng.gen_range(0.45..0.6);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ux, uy) = (angle.cos(), angle.sin());
        image = PixelGrid::from_fn(size, size, 3, |x, y, c| {
            // linear shadow across the disc, darkest on one side
            let t = (((x as f64 - cx) * ux + (y as f64 - cy) * uy) / radius).clamp(-1.0, 1.0);
            let shade = 0.25 + 0.75 * (t + 1.0) / 2.0;
            (image.get(x, y, c) as f64 * dim * shade) as f32
        })
        .expect("non-empty frame");
    }

    Frame {
        name: frame_name(index),
        class,
        image,
        mask: (class == FrameClass::Positive).then_some(mask),
        lesions: blobs.iter().map(|b| b.kind).collect(),
    }
}

/// Renders every frame in memory, in index order.
pub fn frames(spec: &SynthSpec) -> Result<impl Iterator<Item = Frame> + '_, SynthError> {
    spec.validate()?;
    Ok(class_plan(spec)
        .into_iter()
        .enumerate()
        .map(move |(i, class)| render_frame(spec, i, class)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub dir: PathBuf,
    pub images: usize,
    pub positives: usize,
    pub ungradable: usize,
}

/// Writes `images/*.png`, `masks/*.png`, `truth.csv` and `spec.json`
/// under `dir`.
pub fn synth_generate(spec: &SynthSpec, dir: &Path) -> Result<CorpusSummary, SynthError> {
    spec.validate()?;
    let images = dir.join(IMAGES_DIR);
    let masks = dir.join(MASKS_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&masks).map_err(io_err(&masks))?;
    let truth_path = dir.join(TRUTH_FILE);
    let mut truth = csv::Writer::from_path(&truth_path).map_err(|e| SynthError::Truth(e.to_string()))?;
    let mut summary = CorpusSummary {
        dir: dir.to_path_buf(),
        images: 0,
        positives: 0,
        ungradable: 0,
    };
    for frame in frames(spec)? {
        let row = frame.truth();
        let png = encode_png(&frame.image).map_err(|e| SynthError::Image(e.to_string()))?;
        let path = dir.join(&row.file);
        fs::write(&path, png).map_err(io_err(&path))?;
        if let Some(mask) = &frame.mask {
            let png = encode_mask_png(mask).map_err(|e| SynthError::Image(e.to_string()))?;
            let path = dir.join(&row.mask_file);
            fs::write(&path, png).map_err(io_err(&path))?;
        }
        summary.images += 1;
        summary.positives += usize::from(row.is_positive());
        summary.ungradable += usize::from(!row.is_gradable());
        truth.serialize(&row).map_err(|e| SynthError::Truth(e.to_string()))?;
    }
    truth.flush().map_err(io_err(&truth_path))?;
    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&spec_path, json + "\n").map_err(io_err(&spec_path))?;
    Ok(summary)
}

pub fn read_truth(dir: &Path) -> Result<Vec<TruthRow>, SynthError> {
    let path = dir.join(TRUTH_FILE);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| SynthError::Truth(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, SynthError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let grid = decode_any(&bytes).map_err(|e| SynthError::Image(e.to_string()))?;
    let lum = grid.luminance();
    Ok(BinaryMask::from_fn(grid.width(), grid.height(), |x, y| {
        lum[y * grid.width() + x] >= 0.5
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> SynthSpec {
        SynthSpec {
            count,
            size: 128,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn class_counts_are_exact() {
        let plan = class_plan(&SynthSpec::default());
        let count = |c| plan.iter().filter(|p| **p == c).count();
        assert_eq!(count(FrameClass::Positive), 80);
        assert_eq!(count(FrameClass::Ungradable), 20);
        assert_eq!(count(FrameClass::Negative), 100);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec { count: 0, ..small(1) },
            SynthSpec { prevalence: 1.2, ..small(10) },
            SynthSpec { prevalence: 0.8, fraction_ungradable: 0.3, ..small(10) },
            SynthSpec { lesion_kinds: vec![], ..small(10) },
            SynthSpec { salt_fraction: -0.1, ..small(10) },
        ] {
            assert!(matches!(spec.validate(), Err(SynthError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn positives_carry_masks_and_labels() {
        let spec = small(12);
        for frame in frames(&spec).unwrap() {
            let row = frame.truth();
            match frame.class {
                FrameClass::Positive => {
                    assert!(frame.mask.as_ref().is_some_and(|m| !m.is_empty()));
                    assert!(!row.label_set().is_empty());
                    assert!(row.is_gradable());
                }
                FrameClass::Negative => assert!(row.labels.is_empty() && row.mask_file.is_empty()),
                FrameClass::Ungradable => assert!(!row.is_gradable() && !row.is_positive()),
            }
        }
    }

    #[test]
    fn frames_do_not_depend_on_neighbours() {
        let spec = small(6);
        let plan = class_plan(&spec);
        let a = render_frame(&spec, 3, plan[3]);
        let b = frames(&spec).unwrap().nth(3).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
    }
}
