//! Operating-point selection on a labelled calibration set.
//!
//! Candidate thresholds are the distinct calibration scores plus a
//! sentinel above every score (nothing positive). Ties between candidates
//! always resolve to the higher threshold.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StageError;
use crate::metrics::{class_counts, cumulative_sweep, LabeledScore, MetricError, ABOVE_ALL_SCORES};

/// Suffix appended to `calibration_set_id` when the requested target
/// could not be met.
pub const TARGET_UNATTAINED: &str = "target-unattained";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    TargetSensitivity,
    TargetSpecificity,
    Youden,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::TargetSensitivity => "target-sensitivity",
            Policy::TargetSpecificity => "target-specificity",
            Policy::Youden => "youden",
        })
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "target-sensitivity" => Ok(Policy::TargetSensitivity),
            "target-specificity" => Ok(Policy::TargetSpecificity),
            "youden" => Ok(Policy::Youden),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// A chosen threshold and what it achieved on its calibration set.
/// Serialized form is the operating-point document the pipeline loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub policy: Policy,
    pub target: Option<f64>,
    pub achieved_sensitivity: f64,
    pub achieved_specificity: f64,
    pub calibration_set_id: String,
}

impl OperatingPoint {
    pub fn target_unattained(&self) -> bool {
        self.calibration_set_id.ends_with(TARGET_UNATTAINED)
    }
}

/// Content hash of the calibration set, independent of sample order.
fn calibration_set_id(samples: &[LabeledScore]) -> String {
    let mut keyed: Vec<(u64, bool)> = samples.iter().map(|s| (s.score.to_bits(), s.label)).collect();
    keyed.sort_unstable();
    let mut h = Sha256::new();
    for (bits, label) in keyed {
        h.update(bits.to_le_bytes());
        h.update([label as u8]);
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

struct Candidate {
    threshold: f64,
    tp: u64,
    fp: u64,
    sensitivity: f64,
    specificity: f64,
}

pub fn calibrate_operating_point(
    samples: &[LabeledScore],
    policy: Policy,
    target: Option<f64>,
) -> Result<OperatingPoint, StageError> {
    let (positives, negatives) = class_counts(samples);
    if positives == 0 || negatives == 0 {
        return Err(MetricError::AllOneClass { positives, negatives }.into());
    }
    let target = match (policy, target) {
        (Policy::Youden, t) => t,
        (_, None) => return Err(StageError::MissingTarget(policy)),
        (_, Some(t)) if !(0.0..=1.0).contains(&t) => return Err(StageError::InvalidTarget(t)),
        (_, Some(t)) => Some(t),
    };
    let (p, n) = (positives as f64, negatives as f64);

    // descending thresholds, sentinel first
    let candidates: Vec<Candidate> = std::iter::once((ABOVE_ALL_SCORES, 0u64, 0u64))
        .chain(cumulative_sweep(samples))
        .map(|(threshold, tp, fp)| Candidate {
            threshold,
            tp,
            fp,
            sensitivity: tp as f64 / p,
            specificity: (n - fp as f64) / n,
        })
        .collect();

    // Keys are compared exactly in integers: sensitivity ~ tp,
    // specificity ~ -fp, Youden J ~ tp*N - fp*P. Strict improvement keeps
    // the earlier, i.e. higher, threshold on ties.
    let (pi, ni) = (positives as i128, negatives as i128);
    let best_by = |feasible: &dyn Fn(&Candidate) -> bool, key: &dyn Fn(&Candidate) -> i128| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in candidates.iter().enumerate() {
            if feasible(c) && best.map_or(true, |b| key(c) > key(&candidates[b])) {
                best = Some(i);
            }
        }
        best
    };

    let chosen = match policy {
        Policy::TargetSensitivity => {
            let t = target.expect("checked above");
            best_by(&|c| c.sensitivity >= t, &|c| -(c.fp as i128))
        }
        Policy::TargetSpecificity => {
            let t = target.expect("checked above");
            best_by(&|c| c.specificity >= t, &|c| c.tp as i128)
        }
        Policy::Youden => best_by(&|_| true, &|c| c.tp as i128 * ni - c.fp as i128 * pi),
    };
    let (index, unattained) = match chosen {
        Some(i) => (i, false),
        None => (best_by(&|_| true, &|c| c.tp as i128).expect("candidates non-empty"), true),
    };
    let c = &candidates[index];
    let mut id = calibration_set_id(samples);
    if unattained {
        id.push('#');
        id.push_str(TARGET_UNATTAINED);
    }
    Ok(OperatingPoint {
        threshold: c.threshold,
        policy,
        target,
        achieved_sensitivity: c.sensitivity,
        achieved_specificity: c.specificity,
        calibration_set_id: id,
    })
}
