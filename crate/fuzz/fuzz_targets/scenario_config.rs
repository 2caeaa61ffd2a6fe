#![no_main]
use libfuzzer_sys::fuzz_target;
use ranres::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing must never panic; a parsed config must re-parse from its
        // own snapshot.
        if let Ok(cfg) = ScenarioConfig::from_text(text) {
            let snapshot = cfg.snapshot_text();
            let reparsed = ScenarioConfig::from_text(&snapshot).expect("snapshot parses");
            assert_eq!(cfg, reparsed);
        }
    }
});
