//! Arbitrary bytes must never panic the snapshot JSON reader.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = doa_core::SnapshotMatrix::from_json(data);
});
