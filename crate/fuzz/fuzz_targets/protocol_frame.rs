#![no_main]

use libfuzzer_sys::fuzz_target;
use vscreen_core::backends::protocol::{decode_frame, encode_frame, read_frame, Request, Response};

fuzz_target!(|data: &[u8]| {
    if let Ok((payload, rest)) = decode_frame(data) {
        assert_eq!(encode_frame(payload).len() + rest.len(), data.len());
        let _ = serde_json::from_slice::<Request>(payload);
        let _ = serde_json::from_slice::<Response>(payload);
    }
    let _ = read_frame(&mut &data[..]);
});
