#![no_main]

use libfuzzer_sys::fuzz_target;
use pmfscope::pmf::Pmf;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = Pmf::from_bytes(data) {
        assert_eq!(Pmf::from_bytes(&p.to_bytes()).unwrap(), p);
    }
});
