#![no_main]
use libfuzzer_sys::fuzz_target;
use ranres::link::LinkReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = LinkReport::from_csv(text) {
            let round = LinkReport::from_csv(&report.to_csv()).expect("round trip");
            assert_eq!(report, round);
        }
    }
});
