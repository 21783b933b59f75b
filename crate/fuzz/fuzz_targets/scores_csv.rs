#![no_main]

use libfuzzer_sys::fuzz_target;
use vscreen_core::metrics::{compute_roc, read_scored_csv};
use vscreen_core::stages::{calibrate_operating_point, Policy};

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = read_scored_csv(data) {
        if let Ok(roc) = compute_roc(&samples) {
            assert!((0.0..=1.0).contains(&roc.auc));
        }
        let _ = calibrate_operating_point(&samples, Policy::Youden, None);
    }
});
