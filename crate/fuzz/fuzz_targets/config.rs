#![no_main]

use libfuzzer_sys::fuzz_target;
use vscreen_core::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = PipelineConfig::from_json(text);
    }
});
