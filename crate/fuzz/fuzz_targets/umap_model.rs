#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::projection::UmapModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = UmapModel::from_bytes(data) {
        assert_eq!(UmapModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
});
