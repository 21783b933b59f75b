#![no_main]

use libfuzzer_sys::fuzz_target;
use vscreen_core::imaging::decode_any;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode_any(data) {
        assert!(grid.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
