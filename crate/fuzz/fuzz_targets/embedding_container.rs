#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::embedding::{embeddings_from_bytes, embeddings_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = embeddings_from_bytes(data) {
        assert_eq!(embeddings_from_bytes(&embeddings_to_bytes(&v)).unwrap(), v);
    }
});
