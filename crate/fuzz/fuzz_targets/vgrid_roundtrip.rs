#![no_main]

use laminar::volume::{decode, encode};
use libfuzzer_sys::fuzz_target;

// Headers may be spelled many ways, so the canonical encoding of anything
// that decodes must itself decode to the same grid and re-encode unchanged.
fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode(data) {
        let canonical = encode(&grid).expect("decoded grids re-encode");
        let again = decode(&canonical).expect("canonical bytes decode");
        assert_eq!(again, grid);
        assert_eq!(encode(&again).unwrap(), canonical);
    }
});
