#![no_main]
use libfuzzer_sys::fuzz_target;
use ranres::dynamics::{metrics_to_csv, parse_metrics_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_metrics_csv(text) {
            let round = parse_metrics_csv(&metrics_to_csv(&records)).expect("round trip");
            assert_eq!(records, round);
        }
    }
});
