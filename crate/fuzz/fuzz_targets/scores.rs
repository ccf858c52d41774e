#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::detection::parse_scores_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(scores) = parse_scores_str(text) {
            assert!(scores.iter().all(|s| s.score.is_finite()));
        }
    }
});
