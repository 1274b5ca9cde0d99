#![no_main]

use libfuzzer_sys::fuzz_target;
use priceband::io::{read_forecast_csv, write_forecast_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok((ts, f)) = read_forecast_csv(data) {
        // anything accepted must survive a write/read cycle unchanged
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &ts, &f, None).unwrap();
        let (ts2, f2) = read_forecast_csv(buf.as_slice()).unwrap();
        assert_eq!(ts, ts2);
        assert_eq!(f, f2);
    }
});
