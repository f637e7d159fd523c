//! Arbitrary bytes must never panic the experiment config parser.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = doa_core::runner::ExperimentConfig::from_json(text);
    }
});
