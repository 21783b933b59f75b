//! Evaluation metrics: ROC/AUC, pairwise-concordance AUC, DICE and confusion counts.
//!
//! Every metric uses the decision rule `score >= threshold` means positive.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BinaryMask;

/// A threshold strictly above every admissible score, used for the
/// "nothing is positive" end of a sweep.
pub const ABOVE_ALL_SCORES: f64 = 1.0 + f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("samples contain only one class (positives: {positives}, negatives: {negatives})")]
    AllOneClass { positives: usize, negatives: usize },
    #[error("mask geometry mismatch: {0}x{1} vs {2}x{3}")]
    GeometryMismatch(usize, usize, usize, usize),
    #[error("invalid score {0}: must be finite and in [0, 1]")]
    InvalidScore(f64),
    #[error("scored-sample CSV: {0}")]
    Csv(String),
}

/// A classifier score paired with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub label: bool,
}

impl LabeledScore {
    pub fn new(score: f64, label: bool) -> Result<Self, MetricError> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(MetricError::InvalidScore(score));
        }
        Ok(Self { score, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve ordered by decreasing threshold, from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// `None` when there are no positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there are no negatives.
    pub fn specificity(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }
}

pub(crate) fn class_counts(samples: &[LabeledScore]) -> (usize, usize) {
    let positives = samples.iter().filter(|s| s.label).count();
    (positives, samples.len() - positives)
}

fn require_both_classes(samples: &[LabeledScore]) -> Result<(usize, usize), MetricError> {
    let (positives, negatives) = class_counts(samples);
    if positives == 0 || negatives == 0 {
        return Err(MetricError::AllOneClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Distinct scores in decreasing order with the cumulative (tp, fp) counts
/// obtained by thresholding at each of them.
pub(crate) fn cumulative_sweep(samples: &[LabeledScore]) -> Vec<(f64, u64, u64)> {
    let mut sorted: Vec<LabeledScore> = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// ROC curve with one point per distinct score plus the all-negative start point.
pub fn compute_roc(samples: &[LabeledScore]) -> Result<RocCurve, MetricError> {
    let (positives, negatives) = require_both_classes(samples)?;
    let (p, n) = (positives as f64, negatives as f64);

    let mut points = Vec::with_capacity(samples.len() + 1);
    points.push(RocPoint {
        threshold: ABOVE_ALL_SCORES,
        tpr: 0.0,
        fpr: 0.0,
    });
    for (threshold, tp, fp) in cumulative_sweep(samples) {
        points.push(RocPoint {
            threshold,
            tpr: tp as f64 / p,
            fpr: fp as f64 / n,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(RocCurve { points, auc })
}

/// AUC as the probability that a random positive outscores a random
/// negative, ties counting one half. Quadratic; exact integer counting.
pub fn auc_concordance_oracle(samples: &[LabeledScore]) -> Result<f64, MetricError> {
    let (positives, negatives) = require_both_classes(samples)?;
    // Twice the concordance count keeps half-credit ties integral.
    let mut doubled: u128 = 0;
    for pos in samples.iter().filter(|s| s.label) {
        for neg in samples.iter().filter(|s| !s.label) {
            doubled += match pos.score.partial_cmp(&neg.score) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    let denom = 2 * positives as u128 * negatives as u128;
    Ok(doubled as f64 / denom as f64)
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    if !a.same_geometry(b) {
        return Err(MetricError::GeometryMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as u64;
        nb += y as u64;
        inter += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

pub fn confusion_at(samples: &[LabeledScore], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in samples {
        match (s.score >= threshold, s.label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Deserialize)]
struct CsvRow {
    score: f64,
    label: u8,
}

/// Reads the `score,label` interchange format (label is 0 or 1).
pub fn read_scored_csv<R: Read>(reader: R) -> Result<Vec<LabeledScore>, MetricError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| MetricError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["score", "label"] {
        return Err(MetricError::Csv(format!(
            "expected header `score,label`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| MetricError::Csv(format!("row {}: {e}", i + 1)))?;
        let label = match row.label {
            0 => false,
            1 => true,
            other => return Err(MetricError::Csv(format!("row {}: label {other} not in {{0,1}}", i + 1))),
        };
        out.push(LabeledScore::new(row.score, label)?);
    }
    Ok(out)
}

pub fn write_scored_csv<W: std::io::Write>(writer: W, samples: &[LabeledScore]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["score", "label"])?;
    for s in samples {
        w.write_record([s.score.to_string(), (s.label as u8).to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pos: &[f64], neg: &[f64]) -> Vec<LabeledScore> {
        pos.iter()
            .map(|&s| LabeledScore { score: s, label: true })
            .chain(neg.iter().map(|&s| LabeledScore { score: s, label: false }))
            .collect()
    }

    #[test]
    fn roc_extremes() {
        assert_eq!(compute_roc(&samples(&[1.0], &[0.0])).unwrap().auc, 1.0);
        assert_eq!(compute_roc(&samples(&[0.0], &[1.0])).unwrap().auc, 0.0);
    }

    #[test]
    fn roc_mixed_matches_hand_count() {
        // pairs: (0.9,0.5) (0.9,0.2) (0.4,0.2) concordant, (0.4,0.5) not: 3/4
        let s = samples(&[0.9, 0.4], &[0.5, 0.2]);
        assert!((compute_roc(&s).unwrap().auc - 0.75).abs() < 1e-12);
        assert_eq!(auc_concordance_oracle(&s).unwrap(), 0.75);
    }

    #[test]
    fn tied_pair_is_half() {
        let s = samples(&[0.5], &[0.5]);
        assert_eq!(auc_concordance_oracle(&s).unwrap(), 0.5);
        let roc = compute_roc(&s).unwrap();
        assert_eq!(roc.auc, 0.5);
        assert_eq!(roc.points.len(), 2);
    }

    #[test]
    fn roc_requires_both_classes() {
        assert!(matches!(
            compute_roc(&samples(&[0.3, 0.4], &[])),
            Err(MetricError::AllOneClass { positives: 2, negatives: 0 })
        ));
        assert!(auc_concordance_oracle(&samples(&[], &[0.1])).is_err());
    }

    #[test]
    fn roc_endpoints_present() {
        let roc = compute_roc(&samples(&[0.9, 0.3, 0.3], &[0.3, 0.1])).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        // one point per distinct score (0.9, 0.3, 0.1) plus the start
        assert_eq!(roc.points.len(), 4);
    }

    #[test]
    fn dice_cases() {
        let a = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let b = BinaryMask::from_fn(4, 4, |x, y| x < 2 && (1..3).contains(&y));
        let far = BinaryMask::from_fn(4, 4, |x, y| x >= 2 && y >= 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &BinaryMask::empty(3, 4)).is_err());
    }

    #[test]
    fn confusion_examples() {
        let s = samples(&[0.9], &[0.1]);
        assert_eq!(confusion_at(&s, 0.5), ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let all = confusion_at(&s, 0.0);
        assert_eq!((all.tp, all.fp), (1, 1));
        let none = confusion_at(&s, 1.1);
        assert_eq!((none.fn_, none.tn), (1, 1));
        assert_eq!(ConfusionCounts::default().sensitivity(), None);
        assert_eq!(ConfusionCounts::default().specificity(), None);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let s = samples(&[0.25, 1.0], &[0.0]);
        let mut buf = Vec::new();
        write_scored_csv(&mut buf, &s).unwrap();
        assert_eq!(read_scored_csv(buf.as_slice()).unwrap(), s);
        assert!(read_scored_csv("a,b\n1,0\n".as_bytes()).is_err());
        assert!(read_scored_csv("score,label\n0.5,2\n".as_bytes()).is_err());
        assert!(read_scored_csv("score,label\n1.5,1\n".as_bytes()).is_err());
        assert!(read_scored_csv("score,label\nnan,1\n".as_bytes()).is_err());
    }
}
