//! Arbitrary bytes must never panic the snapshot CSV reader.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = doa_core::SnapshotMatrix::read_csv(data);
});
