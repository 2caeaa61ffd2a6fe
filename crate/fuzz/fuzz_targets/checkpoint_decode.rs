#![no_main]
use libfuzzer_sys::fuzz_target;
use ranres::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok((agents, meta)) = checkpoint::decode(data) {
        // Decoded checkpoints re-encode to the identical byte stream.
        let encoded = checkpoint::encode(&agents, meta.n_cells).expect("re-encode");
        assert_eq!(encoded.as_slice(), data);
    }
});
