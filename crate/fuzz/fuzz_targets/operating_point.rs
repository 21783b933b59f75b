#![no_main]

use libfuzzer_sys::fuzz_target;
use vscreen_core::pipeline::parse_operating_point;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(op) = parse_operating_point(text) {
            assert!(op.threshold.is_finite());
        }
    }
});
