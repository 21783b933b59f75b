use proptest::prelude::*;
use vscreen_core::metrics::LabeledScore;
use vscreen_core::stages::{calibrate_operating_point, Policy, PviResult};

fn samples() -> impl Strategy<Value = Vec<LabeledScore>> {
    prop::collection::vec((0.0f64..=1.0, any::<bool>()), 4..80)
        .prop_map(|v| v.into_iter().map(|(score, label)| LabeledScore { score, label }).collect::<Vec<_>>())
        .prop_filter("both classes", |v| v.iter().any(|s| s.label) && v.iter().any(|s| !s.label))
}

fn policy() -> impl Strategy<Value = (Policy, Option<f64>)> {
    prop_oneof![
        Just((Policy::Youden, None)),
        (0.5f64..=1.0).prop_map(|t| (Policy::TargetSensitivity, Some(t))),
        (0.5f64..=1.0).prop_map(|t| (Policy::TargetSpecificity, Some(t))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Recalibrating after any rank-preserving rescoring gives the same
    /// decision for every image.
    #[test]
    fn decisions_invariant_under_rank_preserving_transform(
        calib in samples(),
        test in prop::collection::vec(0.0f64..=1.0, 1..50),
        (policy, target) in policy(),
        k in 0.3f64..3.0,
    ) {
        let f = |x: f64| x.powf(k) * 0.9 + 0.05;
        let mut all: Vec<f64> = calib.iter().map(|s| s.score).chain(test.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        prop_assume!(all.windows(2).all(|w| f(w[0]) < f(w[1])));

        let op = calibrate_operating_point(&calib, policy, target).unwrap();
        let moved: Vec<LabeledScore> = calib.iter().map(|s| LabeledScore { score: f(s.score), label: s.label }).collect();
        let op_moved = calibrate_operating_point(&moved, policy, target).unwrap();
        prop_assert_eq!(op.achieved_sensitivity, op_moved.achieved_sensitivity);
        prop_assert_eq!(op.achieved_specificity, op_moved.achieved_specificity);
        for s in test.iter().chain(calib.iter().map(|c| &c.score)) {
            prop_assert_eq!(PviResult::at(*s, &op).decision, PviResult::at(f(*s), &op_moved).decision, "score {}", s);
        }
    }
}
