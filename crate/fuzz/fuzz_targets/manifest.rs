#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::corpus::parse_manifest_str;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_manifest_str(text, None, "fuzz") {
        // Whatever parses must survive its own serialization.
        let again = parse_manifest_str(&m.to_tsv(), None, "fuzz").expect("round trip");
        assert_eq!(again.records(), m.records());
    }
});
