#![no_main]

use libfuzzer_sys::fuzz_target;
use priceband::dataset::{read_csv, CsvSchema, MissingPolicy};

fuzz_target!(|data: &[u8]| {
    let _ = read_csv(data, &CsvSchema::default());
    let ffill = CsvSchema {
        missing: MissingPolicy::ForwardFill,
        period_minutes: Some(60),
        ..CsvSchema::default()
    };
    if let Ok(frame) = read_csv(data, &ffill) {
        assert!(frame.target().iter().all(|v| v.is_finite()));
    }
});
