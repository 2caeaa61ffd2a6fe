#![no_main]
use libfuzzer_sys::fuzz_target;
use ranres::layout::NetworkLayout;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(layout) = NetworkLayout::from_json(text) {
            // Anything that validates must survive a serialize/parse loop.
            let round = NetworkLayout::from_json(&layout.to_json()).expect("round trip");
            assert_eq!(layout, round);
        }
    }
});
