//! Arbitrary bytes must never panic the geometry JSON parser.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = doa_core::ArrayGeometry::from_json(text);
    }
});
