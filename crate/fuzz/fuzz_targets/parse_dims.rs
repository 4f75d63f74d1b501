#![no_main]

use laminar::volume::GridDims;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dims) = text.parse::<GridDims>() {
            assert!(dims.len() > 0);
            assert_eq!(dims.to_string().parse::<GridDims>().unwrap(), dims);
        }
    }
});
