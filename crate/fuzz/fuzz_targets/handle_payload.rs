#![no_main]

use std::sync::Arc;

use libfuzzer_sys::fuzz_target;
use vscreen_core::backends::handle_payload;
use vscreen_core::backends::{Backend, ChannelProbeBackend, ModelRegistry, PROBE_MODEL_ID};

fuzz_target!(|data: &[u8]| {
    let probe: Arc<dyn Backend> = Arc::new(ChannelProbeBackend::default());
    let registry: ModelRegistry = [(PROBE_MODEL_ID.to_string(), probe)].into();
    let resp = handle_payload(&registry, data);
    assert!(resp.error.is_some() || resp.scores.is_some() || resp.mask.is_some());
});
