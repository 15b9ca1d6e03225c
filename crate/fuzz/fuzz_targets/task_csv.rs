#![no_main]

use libfuzzer_sys::fuzz_target;
use mpmtl::model::{parse_task_csv, TargetKind};

fuzz_target!(|data: &[u8]| {
    // Arbitrary bytes through every reader mode: ragged rows, non-numeric
    // fields, and bad labels must come back as errors, never panics.
    for has_header in [false, true] {
        let _ = parse_task_csv(data, has_header, TargetKind::Regression);
        let _ = parse_task_csv(data, has_header, TargetKind::Binary);
    }
});
