#![no_main]

use libfuzzer_sys::fuzz_target;
use priceband::learners::PointModel;

fuzz_target!(|data: &[u8]| {
    let _ = PointModel::load_json(data);
});
