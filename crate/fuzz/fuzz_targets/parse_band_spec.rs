#![no_main]

use laminar::labelize::BandSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = text.parse::<BandSpec>() {
            assert!(!spec.is_empty());
            assert!(spec.bands().iter().all(|(lo, hi)| lo < hi));
        }
    }
});
