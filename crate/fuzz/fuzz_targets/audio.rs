#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::audio::decode_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = decode_bytes(data) {
        assert!(!buf.is_empty());
    }
});
