#![no_main]

use cicd_core::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode(data) {
        let bytes = encode(&model);
        let again = decode(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(encode(&again), bytes);
    }
});
